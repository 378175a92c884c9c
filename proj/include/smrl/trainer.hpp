#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "smrl/datagen.hpp"
#include "smrl/errors.hpp"
#include "smrl/losses.hpp"
#include "smrl/matrix.hpp"
#include "smrl/mlp.hpp"
#include "smrl/rng.hpp"

namespace smrl {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Ablation modes: full is the complete objective; v1 drops the structure
/// keeper; v2 drops representation balancing; v0 drops both.
enum class Ablation { v0, v1, v2, full };

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::v0: return "v0";
    case Ablation::v1: return "v1";
    case Ablation::v2: return "v2";
    default: return "full";
  }
}

inline Ablation parse_ablation(const std::string& s) {
  if (s == "v0") return Ablation::v0;
  if (s == "v1") return Ablation::v1;
  if (s == "v2") return Ablation::v2;
  if (s == "full") return Ablation::full;
  throw ConfigError("ablation must be one of v0, v1, v2, full; got '" + s + "'");
}

struct TrainConfig {
  // architecture (defaults sit inside the reported search grid)
  std::size_t rep_layers = 2;
  std::size_t rep_width = 100;  // each representation layer, including the output d
  std::size_t head_layers = 2;
  std::size_t head_width = 100;
  std::size_t disc_layers = 2;
  std::size_t disc_width = 100;
  Activation activation = Activation::elu;
  OutputActivation rep_output = OutputActivation::identity;
  InitScheme init = InitScheme::scaled;

  // optimization
  std::size_t batch_size = 100;
  std::size_t max_epochs = 1000;
  std::optional<double> eta;  // absent = optimizer default (1e-3 adam, 1e-2 sgd)
  OptimizerKind optimizer = OptimizerKind::adam;
  LossWeights weights;
  Ablation ablation = Ablation::full;
  std::uint64_t seed = 0;

  // early stopping on validation factual loss
  double val_fraction = 0.3;
  std::size_t patience = 20;
  double min_delta = 1e-4;

  // objective shape
  bool symmetric_balance = false;  // score both arms in the balancing term
  bool standardize = true;

  double resolved_eta() const {
    if (eta) return *eta;
    return optimizer == OptimizerKind::adam ? 1e-3 : 1e-2;
  }

  void validate() const {
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (!(val_fraction >= 0.0 && val_fraction <= 0.5))
      throw ConfigError("train: val_fraction must lie in [0, 0.5], got " +
                        std::to_string(val_fraction));
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
    if (rep_layers < 1 || head_layers < 1 || disc_layers < 1)
      throw ConfigError("train: all networks need at least one layer");
    if (rep_width < 1 || head_width < 1 || disc_width < 1)
      throw ConfigError("train: layer widths must be >= 1");
    if (eta && !(*eta >= 0.0 && std::isfinite(*eta)))
      throw ConfigError("train: eta must be finite and >= 0");
    if (min_delta < 0.0) throw ConfigError("train: min_delta must be >= 0");
    weights.validate();
  }
};

/// Effective loss weights plus whether the discriminator trains at all.
/// v0: alpha = beta = 0; v1: alpha = 0; v2: beta = 0. The discriminator only
/// updates in modes where the balancing term is live (full, v1).
struct AblationPlan {
  LossWeights weights;
  bool update_disc = true;
};

inline AblationPlan ablation_mode(const TrainConfig& cfg) {
  AblationPlan plan{cfg.weights, true};
  switch (cfg.ablation) {
    case Ablation::v0:
      plan.weights.alpha = 0.0;
      plan.weights.beta = 0.0;
      plan.update_disc = false;
      break;
    case Ablation::v1:
      plan.weights.alpha = 0.0;
      break;
    case Ablation::v2:
      plan.weights.beta = 0.0;
      plan.update_disc = false;
      break;
    case Ablation::full:
      break;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// History
// ---------------------------------------------------------------------------

enum class StopReason { max_epochs, early_stop, nonfinite_loss };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::max_epochs: return "max_epochs";
    case StopReason::early_stop: return "early_stop";
    default: return "nonfinite_loss";
  }
}

/// One completed epoch. Quantities a mode never computes stay NaN (absent in
/// serialized form, never zero-filled).
struct EpochRecord {
  std::size_t epoch = 0;
  double train_fl = std::numeric_limits<double>::quiet_NaN();  // batch-mean factual loss
  double val_fl = std::numeric_limits<double>::quiet_NaN();
  double l_disc = std::numeric_limits<double>::quiet_NaN();
  double l_phi = std::numeric_limits<double>::quiet_NaN();
  double l_rsk = std::numeric_limits<double>::quiet_NaN();
  double d_d = std::numeric_limits<double>::quiet_NaN();  // current-disc balance gap
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  StopReason stop_reason = StopReason::max_epochs;
  std::string stop_detail;
  double best_val = std::numeric_limits<double>::quiet_NaN();
  std::size_t best_epoch = 0;
};

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Column z-scoring for covariates and centering/scaling for continuous
/// outcomes, fitted on training rows and stored with the checkpoint so
/// prediction reuses the exact statistics. Inactive = identity.
struct Standardizer {
  std::vector<double> x_mean, x_sd;
  double y_mean = 0.0;
  double y_sd = 1.0;

  static Standardizer identity(std::size_t p) {
    Standardizer s;
    s.x_mean.assign(p, 0.0);
    s.x_sd.assign(p, 1.0);
    return s;
  }

  static Standardizer fit(const Matrix& x, const std::vector<std::size_t>& rows,
                          const std::vector<double>& y, bool scale_y) {
    if (rows.empty()) throw DataError("standardizer: no rows to fit");
    Standardizer s;
    s.x_mean.assign(x.cols(), 0.0);
    s.x_sd.assign(x.cols(), 0.0);
    const double inv = 1.0 / static_cast<double>(rows.size());
    for (std::size_t i : rows)
      for (std::size_t j = 0; j < x.cols(); ++j) s.x_mean[j] += x(i, j);
    for (double& v : s.x_mean) v *= inv;
    for (std::size_t i : rows)
      for (std::size_t j = 0; j < x.cols(); ++j) {
        const double d = x(i, j) - s.x_mean[j];
        s.x_sd[j] += d * d;
      }
    for (double& v : s.x_sd) {
      v = std::sqrt(v * inv);
      if (v == 0.0) v = 1.0;  // constant column: shift only
    }
    if (scale_y) {
      double m = 0.0;
      for (std::size_t i : rows) m += y[i];
      m *= inv;
      double var = 0.0;
      for (std::size_t i : rows) var += (y[i] - m) * (y[i] - m);
      s.y_mean = m;
      s.y_sd = std::sqrt(var * inv);
      if (s.y_sd == 0.0) s.y_sd = 1.0;
    }
    return s;
  }

  Matrix apply_x(const Matrix& x) const {
    if (x.cols() != x_mean.size())
      throw DataError("standardizer: expected " + std::to_string(x_mean.size()) +
                      " columns, got " + std::to_string(x.cols()));
    Matrix out = x;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j)
        out(i, j) = (out(i, j) - x_mean[j]) / x_sd[j];
    return out;
  }

  double apply_y(double y) const { return (y - y_mean) / y_sd; }
  double restore_y(double t) const { return y_mean + y_sd * t; }
};

// ---------------------------------------------------------------------------
// Trained model and prediction
// ---------------------------------------------------------------------------

struct TrainedModel {
  ModelBundle bundle;
  Standardizer scaler;
  TrainConfig config;  // resolved configuration echo
};

struct IteEstimate {
  std::vector<double> tau_hat;
  std::vector<double> mu0_hat;
  std::vector<double> mu1_hat;
};

/// Per-row effect estimate: tau_hat_i = head1(rep(x_i)) - head0(rep(x_i)),
/// with standardization applied on the way in and undone on the way out.
inline IteEstimate predict_ite(const TrainedModel& m, const Matrix& x) {
  if (x.cols() != m.bundle.rep_cfg.input_width())
    throw DataError("predict: expected " + std::to_string(m.bundle.rep_cfg.input_width()) +
                    " covariates, got " + std::to_string(x.cols()));
  const Matrix r = forward_rep(m.bundle, m.scaler.apply_x(x));
  const HeadOutputs h = forward_outcome_both(m.bundle, r);
  IteEstimate out;
  out.tau_hat.resize(x.rows());
  out.mu0_hat.resize(x.rows());
  out.mu1_hat.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    out.mu0_hat[i] = m.scaler.restore_y(h.y0[i]);
    out.mu1_hat[i] = m.scaler.restore_y(h.y1[i]);
    out.tau_hat[i] = out.mu1_hat[i] - out.mu0_hat[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

/// Validation split stratified by arm, so the training rows always keep both
/// arms whenever the dataset has both. Returns (train_rows, val_rows).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_rows(
    const std::vector<int>& z, double val_fraction, Rng& rng) {
  std::vector<std::size_t> arm0, arm1;
  for (std::size_t i = 0; i < z.size(); ++i) (z[i] ? arm1 : arm0).push_back(i);
  std::vector<std::size_t> train, val;
  for (std::vector<std::size_t>* arm : {&arm0, &arm1}) {
    rng.shuffle(*arm);
    const std::size_t n_val = static_cast<std::size_t>(val_fraction * arm->size());
    for (std::size_t k = 0; k < arm->size(); ++k)
      (k < n_val ? val : train).push_back((*arm)[k]);
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {std::move(train), std::move(val)};
}

struct OptimizerSlot {
  AdamState adam;
  OptimizerKind kind = OptimizerKind::adam;

  static OptimizerSlot make(const ParamSet& p, OptimizerKind kind) {
    OptimizerSlot s;
    s.kind = kind;
    if (kind == OptimizerKind::adam) s.adam = AdamState::for_params(p);
    return s;
  }

  void step(ParamSet& p, const ParamSet& g, double eta) {
    if (kind == OptimizerKind::adam)
      adam_step(p, g, adam, eta);
    else
      sgd_step(p, g, eta);
  }
};

inline bool batch_has_both_arms(const std::vector<int>& z, const std::vector<std::size_t>& rows) {
  bool a0 = false, a1 = false;
  for (std::size_t i : rows) (z[i] ? a1 : a0) = true;
  return a0 && a1;
}

}  // namespace detail

struct TrainOutput {
  TrainedModel model;
  TrainHistory history;
};

/// Builds and initializes the three-network bundle for a covariate width.
/// Deterministic in cfg.seed with a fixed derivation order (representation,
/// head0, head1, discriminator), so the discriminator draws its parameters
/// even in modes that never update it. The final layer of every net is
/// linear; hidden layers use cfg.activation.
inline ModelBundle make_bundle(const TrainConfig& cfg, std::size_t p) {
  cfg.validate();
  if (p == 0) throw ConfigError("make_bundle: covariate width must be >= 1");
  ModelBundle m;
  m.rep_cfg = MlpConfig::make(p, cfg.rep_layers - 1, cfg.rep_width, cfg.rep_width,
                              cfg.activation, cfg.rep_output);
  m.head_cfg = MlpConfig::make(cfg.rep_width, cfg.head_layers, cfg.head_width, 1,
                               cfg.activation);
  m.disc_cfg = MlpConfig::make(cfg.rep_width, cfg.disc_layers, cfg.disc_width, 1,
                               cfg.activation);
  m.rep = init_params(m.rep_cfg, derive_seed(cfg.seed, "train.init.rep"), cfg.init);
  m.head0 = init_params(m.head_cfg, derive_seed(cfg.seed, "train.init.head0"), cfg.init);
  m.head1 = init_params(m.head_cfg, derive_seed(cfg.seed, "train.init.head1"), cfg.init);
  m.disc = init_params(m.disc_cfg, derive_seed(cfg.seed, "train.init.disc"), cfg.init);
  m.validate();
  return m;
}

/// Minibatch alternating optimization of the representation W, discriminator
/// U, and outcome heads V. Per iteration:
///   g1 = dL_RSK/dW (structure keeper; skipped when its weight is zero),
///   g2 = dL_D/dU   (discriminator; skipped when balancing is off),
///   g3 = dL_Phi/dW (balancing, through the frozen discriminator),
///   g4 = dL_FL/dV, g5 = dL_FL/dW,
/// then W -= eta*(alpha*g1 + beta*g3 + g5), U -= eta*g2, V -= eta*g4 through
/// the configured optimizer. Everything is deterministic given cfg.seed.
inline TrainOutput train(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  const std::size_t n = data.n(), p = data.p();
  {
    bool a0 = false, a1 = false;
    for (int zi : data.z) (zi ? a1 : a0) = true;
    if (!a0 || !a1) throw DataError("train: dataset must contain both treated and control rows");
  }

  const AblationPlan plan = ablation_mode(cfg);
  const bool rsk_on = plan.weights.alpha > 0.0;
  const bool balance_on = plan.weights.beta > 0.0;
  const double eta = cfg.resolved_eta();

  // --- split, standardize ---------------------------------------------------
  Rng split_rng = Rng::stream(cfg.seed, "train.split");
  auto [train_rows, val_rows] = detail::split_rows(data.z, cfg.val_fraction, split_rng);
  if (!detail::batch_has_both_arms(data.z, train_rows))
    throw DataError("train: training split lost an arm; need at least 2 rows per arm");

  const bool scale_y = cfg.standardize && !data.binary_outcome;
  const Standardizer scaler = cfg.standardize
                                  ? Standardizer::fit(data.x, train_rows, data.yf, scale_y)
                                  : Standardizer::identity(p);
  const Matrix x_all = scaler.apply_x(data.x);
  std::vector<double> y_all(n);
  for (std::size_t i = 0; i < n; ++i) y_all[i] = scaler.apply_y(data.yf[i]);

  const Matrix x_train = select_rows(x_all, train_rows);
  const Matrix x_val = select_rows(x_all, val_rows);
  std::vector<int> z_train(train_rows.size()), z_val(val_rows.size());
  std::vector<double> y_train(train_rows.size()), y_val(val_rows.size());
  for (std::size_t k = 0; k < train_rows.size(); ++k) {
    z_train[k] = data.z[train_rows[k]];
    y_train[k] = y_all[train_rows[k]];
  }
  for (std::size_t k = 0; k < val_rows.size(); ++k) {
    z_val[k] = data.z[val_rows[k]];
    y_val[k] = y_all[val_rows[k]];
  }
  const std::size_t n_train = train_rows.size();

  // --- networks ---------------------------------------------------------------
  TrainedModel model;
  model.scaler = scaler;
  model.config = cfg;
  ModelBundle& m = model.bundle;
  m = make_bundle(cfg, p);

  detail::OptimizerSlot opt_rep = detail::OptimizerSlot::make(m.rep, cfg.optimizer);
  detail::OptimizerSlot opt_h0 = detail::OptimizerSlot::make(m.head0, cfg.optimizer);
  detail::OptimizerSlot opt_h1 = detail::OptimizerSlot::make(m.head1, cfg.optimizer);
  detail::OptimizerSlot opt_disc = detail::OptimizerSlot::make(m.disc, cfg.optimizer);

  // --- epoch loop -------------------------------------------------------------
  TrainHistory history;
  Rng batch_rng = Rng::stream(cfg.seed, "train.batch");
  const std::size_t m_batch = std::min(cfg.batch_size, n_train);
  const std::size_t iters_per_epoch = (n_train + m_batch - 1) / m_batch;
  std::vector<std::size_t> pool(n_train), arm0_pool, arm1_pool;
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t k = 0; k < n_train; ++k) (z_train[k] ? arm1_pool : arm0_pool).push_back(k);

  ModelBundle last_good = m;  // checkpoint restored on non-finite abort
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_improve = 0;
  const bool use_early_stop = !val_rows.empty();

  // draws m_batch distinct training-row positions; single-arm draws are
  // redrawn up to 10 times, then replaced by a per-arm stratified draw
  auto draw_batch = [&](std::vector<std::size_t>& out) {
    for (int attempt = 0; attempt < 10; ++attempt) {
      out.clear();
      for (std::size_t i = 0; i < m_batch; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(batch_rng.integer(n_train - i));
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
      }
      if (detail::batch_has_both_arms(z_train, out)) return;
    }
    out.clear();
    std::size_t m0 = static_cast<std::size_t>(
        std::round(static_cast<double>(m_batch) * arm0_pool.size() / n_train));
    m0 = std::max<std::size_t>(1, std::min(m0, m_batch - 1));
    m0 = std::min(m0, arm0_pool.size());
    std::size_t m1 = std::min(m_batch - m0, arm1_pool.size());
    auto take = [&](std::vector<std::size_t>& arm, std::size_t count) {
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(batch_rng.integer(arm.size() - i));
        std::swap(arm[i], arm[j]);
        out.push_back(arm[i]);
      }
    };
    take(arm0_pool, m0);
    take(arm1_pool, m1);
  };

  std::string nonfinite_what;
  auto guard_finite = [&nonfinite_what](double v, const char* what) {
    if (!std::isfinite(v) && nonfinite_what.empty()) nonfinite_what = what;
    return std::isfinite(v);
  };

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    double epoch_fl = 0.0;
    std::vector<std::size_t> batch;
    bool aborted = false;

    for (std::size_t it = 0; it < iters_per_epoch && !aborted; ++it) {
      draw_batch(batch);
      const Matrix xb = select_rows(x_train, batch);
      std::vector<int> zb(batch.size());
      std::vector<double> yb(batch.size());
      std::vector<std::size_t> b0, b1;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        zb[k] = z_train[batch[k]];
        yb[k] = y_train[batch[k]];
        (zb[k] ? b1 : b0).push_back(k);
      }

      // one representation forward per batch; every loss reuses r
      ForwardCache rep_cache;
      const Matrix r = mlp_forward(m.rep_cfg, m.rep, xb, &rep_cache);

      // g4/g5 pieces: outcome block on r
      ParamSet g_h0 = ParamSet::zeros(m.head_cfg);
      ParamSet g_h1 = ParamSet::zeros(m.head_cfg);
      Matrix d_r;
      const double fl_mse =
          detail::outcome_block(m.head_cfg, m.head0, m.head1, r, zb, yb, &g_h0, &g_h1, &d_r);

      // balancing gradient (g3 direction), appended to d_r after the outcome
      // term so disabled terms leave the live prefix bitwise untouched
      double l_phi = std::numeric_limits<double>::quiet_NaN();
      if (balance_on) {
        const Matrix r0 = select_rows(r, b0);
        Matrix d_r0;
        l_phi = loss_balance_grad(m.disc_cfg, m.disc, r0, d_r0);
        for (std::size_t k = 0; k < b0.size(); ++k)
          for (std::size_t j = 0; j < r.cols(); ++j)
            d_r(b0[k], j) += plan.weights.beta * d_r0(k, j);
        if (cfg.symmetric_balance) {
          const Matrix r1 = select_rows(r, b1);
          Matrix d_r1;
          const double extra = loss_balance_grad(m.disc_cfg, m.disc, r1, d_r1);
          l_phi += extra;
          for (std::size_t k = 0; k < b1.size(); ++k)
            for (std::size_t j = 0; j < r.cols(); ++j)
              d_r(b1[k], j) += plan.weights.beta * d_r1(k, j);
        }
        if (!guard_finite(l_phi, "balance loss")) aborted = true;
      }

      // structure-keeper gradient (g1 direction)
      double l_rsk = std::numeric_limits<double>::quiet_NaN();
      if (rsk_on && !aborted) {
        Matrix d_r_rsk;
        const RskResult res = loss_rsk_grad(xb, r, plan.weights, d_r_rsk);
        l_rsk = res.loss_value;
        add_scaled_inplace(d_r, d_r_rsk, plan.weights.alpha);
        if (!guard_finite(l_rsk, "structure-keeper loss")) aborted = true;
      }

      // discriminator update (g2), computed on r as constants
      double l_disc = std::numeric_limits<double>::quiet_NaN();
      ParamSet g_disc;
      if (plan.update_disc && !aborted) {
        const Matrix r0 = select_rows(r, b0);
        const Matrix r1 = select_rows(r, b1);
        g_disc = ParamSet::zeros(m.disc_cfg);
        l_disc = loss_disc_grad(m.disc_cfg, m.disc, r0, r1, g_disc);
        if (!guard_finite(l_disc, "discriminator loss")) aborted = true;
      }

      if (!aborted) {
        // backward through the representation with the combined d_r, then
        // weight decay completes g5
        ParamSet g_rep = ParamSet::zeros(m.rep_cfg);
        mlp_backward(m.rep_cfg, m.rep, rep_cache, d_r, g_rep);
        const double decay = detail::rep_weight_decay(m.rep, plan.weights.lambda_reg, &g_rep);
        const double fl = fl_mse + decay;
        epoch_fl += fl;
        if (!guard_finite(fl, "factual loss")) {
          aborted = true;
        } else if (!g_rep.all_finite() || !g_h0.all_finite() || !g_h1.all_finite() ||
                   (plan.update_disc && !g_disc.all_finite())) {
          nonfinite_what = "gradient";
          aborted = true;
        } else {
          opt_rep.step(m.rep, g_rep, eta);
          opt_h0.step(m.head0, g_h0, eta);
          opt_h1.step(m.head1, g_h1, eta);
          if (plan.update_disc) opt_disc.step(m.disc, g_disc, eta);
          if (!m.all_finite()) {
            nonfinite_what = "parameters";
            aborted = true;
          }
        }
      }
    }

    if (aborted) {
      m = last_good;
      history.stop_reason = StopReason::nonfinite_loss;
      history.stop_detail = "non-finite " + nonfinite_what + " at epoch " + std::to_string(epoch) +
                            "; restored the last completed-epoch parameters";
      break;
    }

    // --- epoch record ---------------------------------------------------------
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_fl = epoch_fl / static_cast<double>(iters_per_epoch);
    const Matrix r_train = forward_rep(m, x_train);
    if (balance_on || plan.update_disc) {
      Matrix r0 = select_rows(r_train, arm0_pool);
      Matrix r1 = select_rows(r_train, arm1_pool);
      rec.l_disc = loss_disc(m.disc_cfg, m.disc, r0, r1);
      rec.l_phi = loss_balance(m.disc_cfg, m.disc, r0);
      if (cfg.symmetric_balance) rec.l_phi += loss_balance(m.disc_cfg, m.disc, r1);
      // balance gap as the current discriminator sees it, squashed to [0,1]
      double m0 = 0.0, m1 = 0.0;
      const std::vector<double> s0 = forward_disc(m, r0);
      const std::vector<double> s1 = forward_disc(m, r1);
      for (double s : s0) m0 += logistic(s);
      for (double s : s1) m1 += logistic(s);
      rec.d_d = std::fabs(m0 / static_cast<double>(s0.size()) -
                          m1 / static_cast<double>(s1.size()));
    }
    if (rsk_on) rec.l_rsk = loss_rsk(x_train, r_train, plan.weights).loss_value;
    if (use_early_stop)
      rec.val_fl = loss_factual(m, x_val, z_val, y_val, plan.weights);
    history.epochs.push_back(rec);
    last_good = m;

    if (use_early_stop) {
      // an improvement of at least min_delta resets the stall counter
      if (rec.val_fl <= best_val - cfg.min_delta) {
        best_val = rec.val_fl;
        history.best_val = best_val;
        history.best_epoch = epoch;
        since_improve = 0;
      } else if (++since_improve >= cfg.patience) {
        history.stop_reason = StopReason::early_stop;
        history.stop_detail = "validation factual loss stalled for " +
                              std::to_string(cfg.patience) + " epochs (best " +
                              std::to_string(best_val) + " at epoch " +
                              std::to_string(history.best_epoch) + ")";
        break;
      }
    }
  }

  if (history.stop_reason != StopReason::early_stop &&
      history.stop_reason != StopReason::nonfinite_loss) {
    history.stop_reason = StopReason::max_epochs;
    history.stop_detail = "reached max_epochs = " + std::to_string(cfg.max_epochs);
  }
  return {std::move(model), std::move(history)};
}

/// End-of-epoch diagnostics recomputed from a trained model. On the exact
/// dataset the model trained on, this reproduces the final history row's
/// val_fl, l_disc, l_phi, l_rsk, and d_d bit-for-bit (train_fl is a batch
/// average over the epoch's updates and cannot be recovered afterwards).
/// Quantities the mode never computed, or that the split cannot support
/// (a missing arm, an empty validation set), stay NaN.
struct TrainingDiagnostics {
  double val_fl = std::numeric_limits<double>::quiet_NaN();
  double l_disc = std::numeric_limits<double>::quiet_NaN();
  double l_phi = std::numeric_limits<double>::quiet_NaN();
  double l_rsk = std::numeric_limits<double>::quiet_NaN();
  double d_d = std::numeric_limits<double>::quiet_NaN();
};

inline TrainingDiagnostics training_diagnostics(const TrainedModel& model, const Dataset& data) {
  data.validate();
  const TrainConfig& cfg = model.config;
  const AblationPlan plan = ablation_mode(cfg);
  const bool rsk_on = plan.weights.alpha > 0.0;
  const bool balance_on = plan.weights.beta > 0.0;

  Rng split_rng = Rng::stream(cfg.seed, "train.split");
  auto [train_rows, val_rows] = detail::split_rows(data.z, cfg.val_fraction, split_rng);

  const Matrix x_all = model.scaler.apply_x(data.x);
  const Matrix x_train = select_rows(x_all, train_rows);
  std::vector<std::size_t> arm0_pool, arm1_pool;
  for (std::size_t k = 0; k < train_rows.size(); ++k)
    (data.z[train_rows[k]] ? arm1_pool : arm0_pool).push_back(k);

  TrainingDiagnostics out;
  const Matrix r_train = forward_rep(model.bundle, x_train);
  const ModelBundle& m = model.bundle;
  if ((balance_on || plan.update_disc) && !arm0_pool.empty() && !arm1_pool.empty()) {
    Matrix r0 = select_rows(r_train, arm0_pool);
    Matrix r1 = select_rows(r_train, arm1_pool);
    out.l_disc = loss_disc(m.disc_cfg, m.disc, r0, r1);
    out.l_phi = loss_balance(m.disc_cfg, m.disc, r0);
    if (cfg.symmetric_balance) out.l_phi += loss_balance(m.disc_cfg, m.disc, r1);
    double m0 = 0.0, m1 = 0.0;
    const std::vector<double> s0 = forward_disc(m, r0);
    const std::vector<double> s1 = forward_disc(m, r1);
    for (double s : s0) m0 += logistic(s);
    for (double s : s1) m1 += logistic(s);
    out.d_d = std::fabs(m0 / static_cast<double>(s0.size()) -
                        m1 / static_cast<double>(s1.size()));
  }
  if (rsk_on && train_rows.size() >= 2)
    out.l_rsk = loss_rsk(x_train, r_train, plan.weights).loss_value;
  if (!val_rows.empty()) {
    const Matrix x_val = select_rows(x_all, val_rows);
    std::vector<int> z_val(val_rows.size());
    std::vector<double> y_val(val_rows.size());
    for (std::size_t k = 0; k < val_rows.size(); ++k) {
      z_val[k] = data.z[val_rows[k]];
      y_val[k] = model.scaler.apply_y(data.yf[val_rows[k]]);
    }
    out.val_fl = loss_factual(m, x_val, z_val, y_val, plan.weights);
  }
  return out;
}

}  // namespace smrl
