#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "smrl/datagen.hpp"
#include "smrl/errors.hpp"
#include "smrl/trainer.hpp"
#include "test_util.hpp"

using smrl::Ablation;
using smrl::Activation;
using smrl::ConfigError;
using smrl::DataError;
using smrl::Dataset;
using smrl::Matrix;
using smrl::ModelBundle;
using smrl::OptimizerKind;
using smrl::ParamSet;
using smrl::Rng;
using smrl::StopReason;
using smrl::TrainConfig;
using smrl::TrainOutput;
using smrl::TrainedModel;

namespace {

bool bit_equal(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

bool same_params(const ParamSet& a, const ParamSet& b) {
  const std::vector<double> fa = a.flatten(), fb = b.flatten();
  if (fa.size() != fb.size()) return false;
  for (std::size_t i = 0; i < fa.size(); ++i)
    if (!bit_equal(fa[i], fb[i])) return false;
  return true;
}

// Noiseless linear potential outcomes: y = x.w + effect*z. Exactly
// representable by any identity-activation bundle, so training loss can be
// driven to zero.
Dataset linear_dataset(std::size_t n, std::size_t p, std::uint64_t seed, double effect) {
  Rng rng(seed);
  Dataset d;
  d.x = testutil::rand_matrix(rng, n, p);
  d.z.resize(n);
  d.yf.resize(n);
  std::vector<double> w(p);
  for (double& v : w) v = rng.uniform(-1.5, 1.5);
  for (std::size_t i = 0; i < n; ++i) {
    d.z[i] = static_cast<int>(i % 2);
    double dot = 0.0;
    for (std::size_t j = 0; j < p; ++j) dot += d.x(i, j) * w[j];
    d.yf[i] = dot + effect * d.z[i];
  }
  return d;
}

TrainConfig small_cfg(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.rep_layers = 2;
  cfg.rep_width = 8;
  cfg.head_layers = 2;
  cfg.head_width = 8;
  cfg.disc_layers = 2;
  cfg.disc_width = 8;
  cfg.batch_size = 100;
  cfg.max_epochs = 3;
  cfg.seed = seed;
  return cfg;
}

Dataset sim_dataset(std::size_t n, std::size_t p, std::uint64_t seed) {
  smrl::SimConfig sc;
  sc.n = n;
  sc.p = p;
  sc.seed = seed;
  sc.coefficient_source = smrl::CoefficientSource::resample;
  return smrl::make_dataset(sc);
}

}  // namespace

TEST_CASE("trainer: one SGD step on 1-unit linear networks matches a hand-computed update") {
  TrainConfig cfg;
  cfg.rep_layers = 1;
  cfg.rep_width = 1;
  cfg.head_layers = 1;
  cfg.head_width = 1;
  cfg.disc_layers = 1;
  cfg.disc_width = 1;
  cfg.activation = Activation::identity;
  cfg.batch_size = 2;
  cfg.max_epochs = 1;
  cfg.eta = 0.25;
  cfg.optimizer = OptimizerKind::sgd;
  cfg.ablation = Ablation::v0;
  cfg.seed = 7;
  cfg.val_fraction = 0.0;
  cfg.standardize = false;
  cfg.weights.lambda_reg = 0.01;

  Dataset d;
  d.x = Matrix::from_rows({{0.7}, {-0.4}});
  d.z = {0, 1};
  d.yf = {1.3, 0.2};

  // initial parameters, reproduced through the public builder
  const ModelBundle init = smrl::make_bundle(cfg, 1);
  const double wr = init.rep.w[0](0, 0), br = init.rep.b[0][0];
  const double w01 = init.head0.w[0](0, 0), b01 = init.head0.b[0][0];
  const double w02 = init.head0.w[1](0, 0), b02 = init.head0.b[1][0];
  const double w11 = init.head1.w[0](0, 0), b11 = init.head1.b[0][0];
  const double w12 = init.head1.w[1](0, 0), b12 = init.head1.b[1][0];

  // forward: r = wr x + br, head h: yhat = wh2 (wh1 r + bh1) + bh2
  const double rA = wr * 0.7 + br;
  const double rB = wr * -0.4 + br;
  const double aA = w01 * rA + b01, yhA = w02 * aA + b02, eA = yhA - 1.3;
  const double aB = w11 * rB + b11, yhB = w12 * aB + b12, eB = yhB - 0.2;
  // factual loss is the mean routed squared error, so d yhat = 2 e / n = e
  const double lam = 0.01;
  const double fl = 0.5 * (eA * eA + eB * eB) + lam * wr * wr;
  const double g_w02 = eA * aA, g_b02 = eA, daA = eA * w02;
  const double g_w01 = daA * rA, g_b01 = daA, drA = daA * w01;
  const double g_w12 = eB * aB, g_b12 = eB, daB = eB * w12;
  const double g_w11 = daB * rB, g_b11 = daB, drB = daB * w11;
  const double g_wr = drA * 0.7 + drB * -0.4 + 2.0 * lam * wr;
  const double g_br = drA + drB;

  const TrainOutput out = smrl::train(d, cfg);
  const ModelBundle& m = out.model.bundle;
  const double eta = 0.25;
  const auto close = [](double v) { return doctest::Approx(v).epsilon(1e-12); };
  CHECK(m.rep.w[0](0, 0) == close(wr - eta * g_wr));
  CHECK(m.rep.b[0][0] == close(br - eta * g_br));
  CHECK(m.head0.w[0](0, 0) == close(w01 - eta * g_w01));
  CHECK(m.head0.b[0][0] == close(b01 - eta * g_b01));
  CHECK(m.head0.w[1](0, 0) == close(w02 - eta * g_w02));
  CHECK(m.head0.b[1][0] == close(b02 - eta * g_b02));
  CHECK(m.head1.w[0](0, 0) == close(w11 - eta * g_w11));
  CHECK(m.head1.b[0][0] == close(b11 - eta * g_b11));
  CHECK(m.head1.w[1](0, 0) == close(w12 - eta * g_w12));
  CHECK(m.head1.b[1][0] == close(b12 - eta * g_b12));
  // the discriminator never trains in this mode
  CHECK(same_params(m.disc, init.disc));

  REQUIRE(out.history.epochs.size() == 1);
  CHECK(out.history.epochs[0].train_fl == close(fl));
  CHECK(out.history.stop_reason == StopReason::max_epochs);
  CHECK(std::isnan(out.history.epochs[0].val_fl));
  CHECK(std::isnan(out.history.epochs[0].l_disc));
  CHECK(std::isnan(out.history.epochs[0].l_phi));
  CHECK(std::isnan(out.history.epochs[0].l_rsk));
  CHECK(std::isnan(out.history.epochs[0].d_d));
}

TEST_CASE("trainer: zero learning rate leaves every parameter bit-identical") {
  TrainConfig cfg = small_cfg(3);
  cfg.eta = 0.0;
  cfg.ablation = Ablation::full;
  const Dataset d = sim_dataset(60, 4, 5);
  const TrainOutput out = smrl::train(d, cfg);
  const ModelBundle init = smrl::make_bundle(cfg, 4);
  CHECK(same_params(out.model.bundle.rep, init.rep));
  CHECK(same_params(out.model.bundle.head0, init.head0));
  CHECK(same_params(out.model.bundle.head1, init.head1));
  CHECK(same_params(out.model.bundle.disc, init.disc));
}

TEST_CASE("trainer: identical configuration and data reproduce the run bit for bit") {
  TrainConfig cfg = small_cfg(11);
  cfg.batch_size = 16;
  cfg.max_epochs = 4;
  cfg.ablation = Ablation::full;
  const Dataset d = sim_dataset(60, 4, 9);
  const TrainOutput a = smrl::train(d, cfg);
  const TrainOutput b = smrl::train(d, cfg);
  CHECK(same_params(a.model.bundle.rep, b.model.bundle.rep));
  CHECK(same_params(a.model.bundle.head0, b.model.bundle.head0));
  CHECK(same_params(a.model.bundle.head1, b.model.bundle.head1));
  CHECK(same_params(a.model.bundle.disc, b.model.bundle.disc));
  REQUIRE(a.history.epochs.size() == b.history.epochs.size());
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
    const auto& ra = a.history.epochs[i];
    const auto& rb = b.history.epochs[i];
    CHECK(bit_equal(ra.train_fl, rb.train_fl));
    CHECK(bit_equal(ra.val_fl, rb.val_fl));
    CHECK(bit_equal(ra.l_disc, rb.l_disc));
    CHECK(bit_equal(ra.l_phi, rb.l_phi));
    CHECK(bit_equal(ra.l_rsk, rb.l_rsk));
    CHECK(bit_equal(ra.d_d, rb.d_d));
  }
  CHECK(a.model.scaler.x_mean == b.model.scaler.x_mean);
  CHECK(a.model.scaler.x_sd == b.model.scaler.x_sd);
}

TEST_CASE("trainer: modes without the balancing term never touch the discriminator") {
  const Dataset d = sim_dataset(60, 4, 13);
  for (Ablation mode : {Ablation::v0, Ablation::v2}) {
    TrainConfig cfg = small_cfg(17);
    cfg.ablation = mode;
    const TrainOutput out = smrl::train(d, cfg);
    const ModelBundle init = smrl::make_bundle(cfg, 4);
    CHECK(same_params(out.model.bundle.disc, init.disc));
    // the representation and heads did move
    CHECK_FALSE(same_params(out.model.bundle.rep, init.rep));
    CHECK_FALSE(same_params(out.model.bundle.head0, init.head0));
  }
  TrainConfig cfg = small_cfg(17);
  cfg.ablation = Ablation::full;
  const TrainOutput out = smrl::train(d, cfg);
  CHECK_FALSE(same_params(out.model.bundle.disc, smrl::make_bundle(cfg, 4).disc));
}

TEST_CASE("trainer: removing the structure keeper by mode or by weight is the same trajectory") {
  const Dataset d = sim_dataset(60, 4, 21);
  TrainConfig cfg_v1 = small_cfg(23);
  cfg_v1.ablation = Ablation::v1;
  TrainConfig cfg_full = small_cfg(23);
  cfg_full.ablation = Ablation::full;
  cfg_full.weights.alpha = 0.0;
  const TrainOutput a = smrl::train(d, cfg_v1);
  const TrainOutput b = smrl::train(d, cfg_full);
  CHECK(same_params(a.model.bundle.rep, b.model.bundle.rep));
  CHECK(same_params(a.model.bundle.head0, b.model.bundle.head0));
  CHECK(same_params(a.model.bundle.head1, b.model.bundle.head1));
  CHECK(same_params(a.model.bundle.disc, b.model.bundle.disc));

  // with both auxiliary weights zeroed, full mode walks the v0 path for the
  // representation and heads; only the discriminator (still training) differs
  TrainConfig cfg_v0 = small_cfg(23);
  cfg_v0.ablation = Ablation::v0;
  TrainConfig cfg_dead = small_cfg(23);
  cfg_dead.ablation = Ablation::full;
  cfg_dead.weights.alpha = 0.0;
  cfg_dead.weights.beta = 0.0;
  const TrainOutput c = smrl::train(d, cfg_v0);
  const TrainOutput e = smrl::train(d, cfg_dead);
  CHECK(same_params(c.model.bundle.rep, e.model.bundle.rep));
  CHECK(same_params(c.model.bundle.head0, e.model.bundle.head0));
  CHECK(same_params(c.model.bundle.head1, e.model.bundle.head1));
  CHECK_FALSE(same_params(c.model.bundle.disc, e.model.bundle.disc));
}

TEST_CASE("trainer: outcome heads receive gradients only from the factual loss") {
  // one full-batch step from a shared initialization: the auxiliary losses
  // reshape the representation update but must leave the head update alone
  const Dataset d = sim_dataset(60, 4, 27);
  TrainConfig cfg_v0 = small_cfg(29);
  cfg_v0.max_epochs = 1;
  cfg_v0.ablation = Ablation::v0;
  TrainConfig cfg_full = cfg_v0;
  cfg_full.ablation = Ablation::full;
  const TrainOutput a = smrl::train(d, cfg_v0);
  const TrainOutput b = smrl::train(d, cfg_full);
  CHECK(same_params(a.model.bundle.head0, b.model.bundle.head0));
  CHECK(same_params(a.model.bundle.head1, b.model.bundle.head1));
  CHECK_FALSE(same_params(a.model.bundle.rep, b.model.bundle.rep));
}

TEST_CASE("trainer: linear nets interpolate noiseless linear outcomes") {
  const Dataset d = linear_dataset(120, 3, 31, 2.0);
  TrainConfig cfg;
  cfg.rep_layers = 1;
  cfg.rep_width = 4;
  cfg.head_layers = 1;
  cfg.head_width = 4;
  cfg.disc_layers = 1;
  cfg.disc_width = 4;
  cfg.activation = Activation::identity;
  cfg.batch_size = 120;
  cfg.max_epochs = 600;
  cfg.eta = 0.02;
  cfg.ablation = Ablation::v0;
  cfg.seed = 33;
  cfg.val_fraction = 0.0;
  cfg.weights.lambda_reg = 0.0;
  const TrainOutput out = smrl::train(d, cfg);
  REQUIRE(out.history.epochs.size() == 600);
  CHECK(out.history.stop_reason == StopReason::max_epochs);
  CHECK(out.history.epochs.back().train_fl < 1e-3);
}

TEST_CASE("trainer: stalled validation loss stops after exactly patience epochs") {
  // eta = 0 freezes the parameters, so the validation loss never improves
  // after its first evaluation
  const Dataset d = sim_dataset(40, 3, 35);
  TrainConfig cfg = small_cfg(37);
  cfg.eta = 0.0;
  cfg.max_epochs = 200;
  cfg.patience = 5;
  cfg.val_fraction = 0.3;
  const TrainOutput out = smrl::train(d, cfg);
  CHECK(out.history.stop_reason == StopReason::early_stop);
  CHECK(out.history.epochs.size() == 6);  // epoch 0 improves from +inf, then 5 stalls
  CHECK(out.history.best_epoch == 0);
  CHECK(out.history.stop_detail.find("stalled") != std::string::npos);
}

TEST_CASE("trainer: diverging optimization stops cleanly with finite parameters") {
  const Dataset d = linear_dataset(20, 2, 39, 1.0);
  TrainConfig cfg;
  cfg.rep_layers = 1;
  cfg.rep_width = 2;
  cfg.head_layers = 1;
  cfg.head_width = 2;
  cfg.disc_layers = 1;
  cfg.disc_width = 2;
  cfg.activation = Activation::identity;
  cfg.batch_size = 20;
  cfg.max_epochs = 50;
  cfg.eta = 1e12;
  cfg.optimizer = OptimizerKind::sgd;
  cfg.ablation = Ablation::v0;
  cfg.seed = 41;
  cfg.val_fraction = 0.0;
  cfg.standardize = false;
  cfg.weights.lambda_reg = 0.0;
  const TrainOutput out = smrl::train(d, cfg);
  CHECK(out.history.stop_reason == StopReason::nonfinite_loss);
  CHECK(out.history.stop_detail.find("non-finite") != std::string::npos);
  CHECK(out.history.epochs.size() >= 1);
  CHECK(out.history.epochs.size() < 50);
  CHECK(out.model.bundle.all_finite());
}

TEST_CASE("trainer: per-epoch diagnostics are reported only in modes that compute them") {
  const Dataset d = sim_dataset(60, 4, 43);
  const auto run = [&](Ablation mode) {
    TrainConfig cfg = small_cfg(45);
    cfg.max_epochs = 2;
    cfg.ablation = mode;
    return smrl::train(d, cfg);
  };
  const TrainOutput v0 = run(Ablation::v0);
  for (const auto& r : v0.history.epochs) {
    CHECK(std::isfinite(r.train_fl));
    CHECK(std::isfinite(r.val_fl));
    CHECK(std::isnan(r.l_disc));
    CHECK(std::isnan(r.l_phi));
    CHECK(std::isnan(r.l_rsk));
    CHECK(std::isnan(r.d_d));
  }
  const TrainOutput v1 = run(Ablation::v1);
  for (const auto& r : v1.history.epochs) {
    CHECK(std::isfinite(r.l_disc));
    CHECK(std::isfinite(r.l_phi));
    CHECK(std::isfinite(r.d_d));
    CHECK(r.d_d >= 0.0);
    CHECK(r.d_d <= 1.0);
    CHECK(std::isnan(r.l_rsk));
  }
  const TrainOutput v2 = run(Ablation::v2);
  for (const auto& r : v2.history.epochs) {
    CHECK(std::isfinite(r.l_rsk));
    CHECK(std::isnan(r.l_disc));
    CHECK(std::isnan(r.l_phi));
    CHECK(std::isnan(r.d_d));
  }
  const TrainOutput full = run(Ablation::full);
  for (const auto& r : full.history.epochs) {
    CHECK(std::isfinite(r.train_fl));
    CHECK(std::isfinite(r.l_disc));
    CHECK(std::isfinite(r.l_phi));
    CHECK(std::isfinite(r.l_rsk));
    CHECK(std::isfinite(r.d_d));
  }
}

TEST_CASE("trainer: validation split is stratified by arm and partitions the rows") {
  std::vector<int> z(40, 0);
  for (std::size_t i = 30; i < 40; ++i) z[i] = 1;
  Rng rng(123);
  const auto [train, val] = smrl::detail::split_rows(z, 0.5, rng);
  CHECK(train.size() == 20);
  CHECK(val.size() == 20);
  std::size_t val0 = 0, val1 = 0;
  for (std::size_t i : val) (z[i] ? val1 : val0)++;
  CHECK(val0 == 15);  // floor(0.5 * 30)
  CHECK(val1 == 5);   // floor(0.5 * 10)
  std::vector<std::size_t> all = train;
  all.insert(all.end(), val.begin(), val.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);

  Rng rng2(123);
  const auto [train2, val2] = smrl::detail::split_rows(z, 0.0, rng2);
  CHECK(val2.empty());
  CHECK(train2.size() == 40);
}

TEST_CASE("trainer: heavily imbalanced arms still yield two-arm minibatches") {
  // 2 treated among 102 rows with batches of 5: most raw draws are
  // single-arm, forcing the redraw and stratified fallback paths; the
  // discriminator loss would reject any single-arm batch that slipped through
  Dataset d = linear_dataset(102, 3, 47, 1.5);
  for (std::size_t i = 0; i < d.n(); ++i) d.z[i] = 0;
  d.z[10] = 1;
  d.z[60] = 1;
  d.yf[10] += 1.5;
  d.yf[60] += 1.5;
  TrainConfig cfg = small_cfg(49);
  cfg.batch_size = 5;
  cfg.max_epochs = 2;
  cfg.ablation = Ablation::full;
  cfg.val_fraction = 0.0;  // two treated rows cannot spare a validation arm
  const TrainOutput out = smrl::train(d, cfg);
  CHECK(out.history.epochs.size() == 2);
  for (const auto& r : out.history.epochs) CHECK(std::isfinite(r.l_disc));
}

TEST_CASE("trainer: configuration and data validation") {
  const Dataset d = sim_dataset(30, 3, 51);
  TrainConfig cfg = small_cfg(53);

  TrainConfig bad = cfg;
  bad.batch_size = 1;
  CHECK_THROWS_AS(smrl::train(d, bad), ConfigError);
  bad = cfg;
  bad.val_fraction = 0.6;
  CHECK_THROWS_AS(smrl::train(d, bad), ConfigError);
  bad = cfg;
  bad.patience = 0;
  CHECK_THROWS_AS(smrl::train(d, bad), ConfigError);
  bad = cfg;
  bad.rep_layers = 0;
  CHECK_THROWS_AS(smrl::train(d, bad), ConfigError);
  bad = cfg;
  bad.eta = -0.1;
  CHECK_THROWS_AS(smrl::train(d, bad), ConfigError);
  bad = cfg;
  bad.eta = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(smrl::train(d, bad), ConfigError);
  bad = cfg;
  bad.min_delta = -1.0;
  CHECK_THROWS_AS(smrl::train(d, bad), ConfigError);

  Dataset one_arm = d;
  for (int& zi : one_arm.z) zi = 1;
  CHECK_THROWS_AS(smrl::train(one_arm, cfg), DataError);

  CHECK(smrl::parse_ablation("v0") == Ablation::v0);
  CHECK(smrl::parse_ablation("v1") == Ablation::v1);
  CHECK(smrl::parse_ablation("v2") == Ablation::v2);
  CHECK(smrl::parse_ablation("full") == Ablation::full);
  CHECK_THROWS_AS(smrl::parse_ablation("v3"), ConfigError);
  for (Ablation a : {Ablation::v0, Ablation::v1, Ablation::v2, Ablation::full})
    CHECK(smrl::parse_ablation(smrl::to_string(a)) == a);
}

TEST_CASE("trainer: ablation plan gates the loss weights and discriminator updates") {
  TrainConfig cfg;
  cfg.weights.alpha = 2.5;
  cfg.weights.beta = 1.5;
  cfg.ablation = Ablation::v0;
  auto plan = smrl::ablation_mode(cfg);
  CHECK(plan.weights.alpha == 0.0);
  CHECK(plan.weights.beta == 0.0);
  CHECK_FALSE(plan.update_disc);
  cfg.ablation = Ablation::v1;
  plan = smrl::ablation_mode(cfg);
  CHECK(plan.weights.alpha == 0.0);
  CHECK(plan.weights.beta == 1.5);
  CHECK(plan.update_disc);
  cfg.ablation = Ablation::v2;
  plan = smrl::ablation_mode(cfg);
  CHECK(plan.weights.alpha == 2.5);
  CHECK(plan.weights.beta == 0.0);
  CHECK_FALSE(plan.update_disc);
  cfg.ablation = Ablation::full;
  plan = smrl::ablation_mode(cfg);
  CHECK(plan.weights.alpha == 2.5);
  CHECK(plan.weights.beta == 1.5);
  CHECK(plan.update_disc);
}

TEST_CASE("trainer: effect predictions compose the scaler and both heads") {
  TrainConfig cfg;
  cfg.rep_layers = 1;
  cfg.rep_width = 1;
  cfg.head_layers = 1;
  cfg.head_width = 1;
  cfg.disc_layers = 1;
  cfg.disc_width = 1;
  cfg.activation = Activation::identity;
  cfg.seed = 55;

  SUBCASE("identical heads predict exactly zero effect") {
    TrainedModel m;
    m.bundle = smrl::make_bundle(cfg, 1);
    m.bundle.head1 = m.bundle.head0;
    m.scaler = smrl::Standardizer::identity(1);
    m.scaler.y_mean = 3.0;
    m.scaler.y_sd = 2.0;
    m.config = cfg;
    Rng rng(57);
    const Matrix x = testutil::rand_matrix(rng, 9, 1);
    const smrl::IteEstimate est = smrl::predict_ite(m, x);
    for (std::size_t i = 0; i < 9; ++i) {
      CHECK(est.tau_hat[i] == 0.0);
      CHECK(est.mu0_hat[i] == est.mu1_hat[i]);
    }
  }

  SUBCASE("an output-bias offset times the outcome scale is the predicted effect") {
    TrainedModel m;
    m.bundle = smrl::make_bundle(cfg, 1);
    m.bundle.head1 = m.bundle.head0;
    m.bundle.head1.b.back()[0] += 1.25;
    m.scaler = smrl::Standardizer::identity(1);
    m.scaler.y_sd = 2.5;
    m.config = cfg;
    Rng rng(59);
    const Matrix x = testutil::rand_matrix(rng, 9, 1);
    const smrl::IteEstimate est = smrl::predict_ite(m, x);
    for (std::size_t i = 0; i < 9; ++i)
      CHECK(est.tau_hat[i] == doctest::Approx(2.5 * 1.25).epsilon(1e-12));
  }

  SUBCASE("scalar pipeline oracle, nontrivial covariate and outcome scaling") {
    TrainedModel m;
    m.bundle = smrl::make_bundle(cfg, 1);
    m.scaler.x_mean = {4.0};
    m.scaler.x_sd = {0.5};
    m.scaler.y_mean = -2.0;
    m.scaler.y_sd = 3.0;
    m.config = cfg;
    const double wr = m.bundle.rep.w[0](0, 0), br = m.bundle.rep.b[0][0];
    const auto head = [&](const ParamSet& h, double r) {
      return h.w[1](0, 0) * (h.w[0](0, 0) * r + h.b[0][0]) + h.b[1][0];
    };
    Rng rng(61);
    Matrix x(5, 1);
    for (double& v : x.data()) v = rng.uniform(0.0, 8.0);
    const smrl::IteEstimate est = smrl::predict_ite(m, x);
    for (std::size_t i = 0; i < 5; ++i) {
      const double r = wr * ((x(i, 0) - 4.0) / 0.5) + br;
      const double mu0 = -2.0 + 3.0 * head(m.bundle.head0, r);
      const double mu1 = -2.0 + 3.0 * head(m.bundle.head1, r);
      CHECK(est.mu0_hat[i] == doctest::Approx(mu0).epsilon(1e-12));
      CHECK(est.mu1_hat[i] == doctest::Approx(mu1).epsilon(1e-12));
      CHECK(est.tau_hat[i] == doctest::Approx(mu1 - mu0).epsilon(1e-12));
    }
  }

  SUBCASE("covariate width mismatch is rejected") {
    TrainedModel m;
    m.bundle = smrl::make_bundle(cfg, 1);
    m.scaler = smrl::Standardizer::identity(1);
    m.config = cfg;
    CHECK_THROWS_AS(smrl::predict_ite(m, Matrix(3, 2)), DataError);
  }
}

TEST_CASE("trainer: training reduces the factual loss on a generated cohort") {
  const Dataset d = sim_dataset(200, 5, 63);
  TrainConfig cfg = small_cfg(65);
  cfg.max_epochs = 40;
  cfg.batch_size = 64;
  cfg.ablation = Ablation::full;
  const TrainOutput out = smrl::train(d, cfg);
  REQUIRE(out.history.epochs.size() >= 2);
  const double first = out.history.epochs.front().train_fl;
  const double last = out.history.epochs.back().train_fl;
  CHECK(last < first);
  // the estimator produces finite effects for every row
  const smrl::IteEstimate est = smrl::predict_ite(out.model, d.x);
  for (double t : est.tau_hat) CHECK(std::isfinite(t));
}
