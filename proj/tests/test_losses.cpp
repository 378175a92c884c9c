#include <doctest.h>

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "oracles.hpp"
#include "smrl/losses.hpp"
#include "smrl/matrix.hpp"
#include "smrl/mlp.hpp"
#include "smrl/rng.hpp"
#include "test_util.hpp"

using smrl::Activation;
using smrl::LossWeights;
using smrl::Matrix;
using smrl::MlpConfig;
using smrl::ModelBundle;
using smrl::ParamSet;
using testutil::rand_matrix;

namespace {

// Small worked instance: 6-sample batch, widths (4,3,2).
struct SmallCase {
  ModelBundle m;
  Matrix x;
  std::vector<int> z;
  std::vector<double> y;
  Matrix r0() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < z.size(); ++i)
      if (z[i] == 0) idx.push_back(i);
    return smrl::select_rows(smrl::forward_rep(m, x), idx);
  }
  Matrix r1() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < z.size(); ++i)
      if (z[i] == 1) idx.push_back(i);
    return smrl::select_rows(smrl::forward_rep(m, x), idx);
  }
};

SmallCase make_case(std::uint64_t seed) {
  SmallCase c;
  c.m.rep_cfg = MlpConfig{{4, 3, 2}, Activation::elu};
  c.m.head_cfg = MlpConfig{{2, 3, 1}, Activation::elu};
  c.m.disc_cfg = MlpConfig{{2, 3, 1}, Activation::elu};
  c.m.rep = smrl::init_params(c.m.rep_cfg, seed);
  c.m.head0 = smrl::init_params(c.m.head_cfg, seed + 1);
  c.m.head1 = smrl::init_params(c.m.head_cfg, seed + 2);
  c.m.disc = smrl::init_params(c.m.disc_cfg, seed + 3);
  smrl::Rng rng(seed + 4);
  c.x = rand_matrix(rng, 6, 4);
  c.z = {0, 1, 0, 1, 0, 1};
  c.y.resize(6);
  for (auto& v : c.y) v = rng.normal();
  return c;
}

void check_fd(const std::vector<double>& analytic, const std::vector<double>& fd) {
  REQUIRE(analytic.size() == fd.size());
  for (std::size_t k = 0; k < fd.size(); ++k)
    CHECK(std::abs(analytic[k] - fd[k]) <= 1e-4 * std::max(1.0, std::abs(fd[k])));
}

}  // namespace

TEST_CASE("loss_disc: hand cases and per-sample loop") {
  // 1-d representations, identity single-layer disc D(r) = r.
  MlpConfig dcfg = MlpConfig::make(1, 0, 0, 1, Activation::identity);
  ParamSet disc = ParamSet::zeros(dcfg);
  disc.w[0](0, 0) = 1.0;
  Matrix r0(3, 1, 1.0);   // D = +1 on control
  Matrix r1(2, 1, -1.0);  // D = -1 on treated
  CHECK(smrl::loss_disc(dcfg, disc, r0, r1) == doctest::Approx(0.0));

  ParamSet zero = ParamSet::zeros(dcfg);
  CHECK(smrl::loss_disc(dcfg, zero, r0, r1) == doctest::Approx(1.0));

  smrl::Rng rng(21);
  const Matrix a = rand_matrix(rng, 4, 1);
  const Matrix b = rand_matrix(rng, 4, 1);
  const ParamSet lin = smrl::init_params(dcfg, 5);
  double ref = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double d0 = a(i, 0) * lin.w[0](0, 0);
    const double d1 = b(i, 0) * lin.w[0](0, 0);
    ref += 0.5 * (d0 - 1.0) * (d0 - 1.0) / 4.0 + 0.5 * (d1 + 1.0) * (d1 + 1.0) / 4.0;
  }
  CHECK(smrl::loss_disc(dcfg, lin, a, b) == doctest::Approx(ref).epsilon(1e-12));

  CHECK_THROWS_WITH_AS(smrl::loss_disc(dcfg, lin, Matrix(0, 1), b),
                       doctest::Contains("control"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(smrl::loss_disc(dcfg, lin, a, Matrix(0, 1)),
                       doctest::Contains("treated"), std::invalid_argument);
}

TEST_CASE("loss_balance: hand cases") {
  MlpConfig dcfg = MlpConfig::make(2, 0, 0, 1, Activation::identity);
  ParamSet zero = ParamSet::zeros(dcfg);
  smrl::Rng rng(31);
  const Matrix r0 = rand_matrix(rng, 5, 2);
  CHECK(smrl::loss_balance(dcfg, zero, r0) == 0.0);

  ParamSet one = ParamSet::zeros(dcfg);
  one.b[0][0] = 1.0;  // D == 1 everywhere
  CHECK(smrl::loss_balance(dcfg, one, r0) == doctest::Approx(0.5));

  const ParamSet lin = smrl::init_params(dcfg, 6);
  double ref = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    const double d = r0(i, 0) * lin.w[0](0, 0) + r0(i, 1) * lin.w[0](1, 0);
    ref += 0.5 * d * d / 5.0;
  }
  CHECK(smrl::loss_balance(dcfg, lin, r0) == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("loss_rsk: identity representation gives exactly -P at zero ridge") {
  smrl::Rng rng(41);
  const Matrix x = rand_matrix(rng, 30, 4);
  LossWeights w;
  w.lambda1 = 0.0;
  w.lambda2 = 0.0;
  w.k = 4;
  const auto res = smrl::loss_rsk(x, x, w);
  REQUIRE(res.correlations.size() == 4);
  for (double rho : res.correlations) CHECK(rho == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(res.loss_value - (-4.0)) < 1e-8);
}

TEST_CASE("loss_rsk: independent representation decorrelates at large n") {
  smrl::Rng rng(42);
  const Matrix x = rand_matrix(rng, 2000, 3);
  const Matrix r = rand_matrix(rng, 2000, 3);
  LossWeights w;
  const auto res = smrl::loss_rsk(x, r, w);
  CHECK(res.correlations[0] <= 0.2);
}

TEST_CASE("loss_rsk matches the generalized eigenproblem and a direct whitened SVD") {
  smrl::Rng rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 8 + static_cast<std::size_t>(rng.integer(20));
    const std::size_t p = 2 + static_cast<std::size_t>(rng.integer(4));
    const std::size_t d = 2 + static_cast<std::size_t>(rng.integer(4));
    const Matrix x = rand_matrix(rng, n, p);
    const Matrix r = rand_matrix(rng, n, d);
    LossWeights w;
    w.lambda1 = 0.1;
    w.lambda2 = 0.1;
    w.k = 1;
    const auto res = smrl::loss_rsk(x, r, w);

    const Matrix cxx = smrl::covariance(x, x);
    const Matrix crr = smrl::covariance(r, r);
    const Matrix cxr = smrl::covariance(x, r);
    Matrix cxx_l = cxx, crr_l = crr;
    for (std::size_t i = 0; i < p; ++i) cxx_l(i, i) += w.lambda1;
    for (std::size_t i = 0; i < d; ++i) crr_l(i, i) += w.lambda2;

    // (a) generalized problem: C_XR (C_RR+l2)^{-1} C_RX  v = rho^2 (C_XX+l1) v
    const Matrix mid =
        oracle::naive_multiply(oracle::naive_multiply(cxr, oracle::gauss_jordan_inverse(crr_l)),
                               smrl::transpose(cxr));
    const auto gen = oracle::generalized_sym_eig(mid, cxx_l);
    for (std::size_t k = 0; k < std::min(p, d); ++k) {
      const double rho = std::sqrt(std::max(gen.values[k], 0.0));
      CHECK(std::abs(res.correlations[k] - rho) < 1e-8);
    }

    // (b) direct whitened SVD via the independent oracle tool chain.
    const Matrix t = oracle::naive_multiply(
        oracle::naive_multiply(oracle::sym_inv_sqrt(cxx_l), cxr), oracle::sym_inv_sqrt(crr_l));
    const auto sv = oracle::one_sided_jacobi_singular_values(t);
    for (std::size_t k = 0; k < std::min(p, d); ++k)
      CHECK(std::abs(res.correlations[k] - sv[k]) < 1e-8);
  }
}

TEST_CASE("loss_rsk invariances: row permutation, affine recoding, ridge monotonicity") {
  smrl::Rng rng(44);
  const std::size_t n = 40;
  const Matrix x = rand_matrix(rng, n, 3);
  Matrix r = rand_matrix(rng, n, 3);
  // Make R correlated with X so the correlations are not near zero.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 3; ++j) r(i, j) += 0.8 * x(i, j);

  LossWeights w;
  const auto base = smrl::loss_rsk(x, r, w);
  REQUIRE(base.correlations.size() == 3);
  CHECK(std::is_sorted(base.correlations.begin(), base.correlations.end(),
                       std::greater<double>()));

  // Joint row permutation.
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);
  const auto permuted = smrl::loss_rsk(smrl::select_rows(x, perm), smrl::select_rows(r, perm), w);
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(std::abs(permuted.correlations[k] - base.correlations[k]) < 1e-10);
  CHECK(std::abs(permuted.loss_value - base.loss_value) < 1e-10);

  // Affine recoding of X at zero ridge leaves canonical correlations alone.
  LossWeights w0;
  w0.lambda1 = 0.0;
  w0.lambda2 = 0.0;
  const auto plain = smrl::loss_rsk(x, r, w0);
  Matrix recode = Matrix::from_rows({{1.5, 0.2, 0.0}, {-0.3, 0.9, 0.1}, {0.0, 0.4, 1.2}});
  Matrix xr = smrl::multiply(x, recode);
  for (std::size_t i = 0; i < n; ++i) {
    xr(i, 0) += 3.0;  // affine shift
    xr(i, 2) -= 1.0;
  }
  const auto recoded = smrl::loss_rsk(xr, r, w0);
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(std::abs(recoded.correlations[k] - plain.correlations[k]) < 1e-6);

  // At zero ridge correlations stay within [0, 1 + 1e-8].
  for (double rho : plain.correlations) {
    CHECK(rho >= 0.0);
    CHECK(rho <= 1.0 + 1e-8);
  }

  // Ridge shrinks: raising lambda1 or lambda2 never increases any correlation.
  LossWeights wa = w0;
  for (double ridge : {1e-3, 1e-2, 1e-1, 1.0}) {
    LossWeights wl1 = wa;
    wl1.lambda1 = ridge;
    const auto shrunk1 = smrl::loss_rsk(x, r, wl1);
    LossWeights wl2 = wa;
    wl2.lambda2 = ridge;
    const auto shrunk2 = smrl::loss_rsk(x, r, wl2);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(shrunk1.correlations[k] <= plain.correlations[k] + 1e-10);
      CHECK(shrunk2.correlations[k] <= plain.correlations[k] + 1e-10);
    }
  }

  // loss_value always equals the negated top-K sum.
  double s = 0.0;
  for (std::size_t k = 0; k < w.resolved_k(3, 3); ++k) s += base.correlations[k];
  CHECK(base.loss_value == doctest::Approx(-s).epsilon(1e-12));
}

TEST_CASE("loss_factual: hand cases and loop oracle") {
  SmallCase c = make_case(900);
  // Constant heads equal to a constant outcome: zero loss at zero decay.
  c.m.head0 = ParamSet::zeros(c.m.head_cfg);
  c.m.head1 = ParamSet::zeros(c.m.head_cfg);
  c.m.head0.b.back()[0] = 2.5;
  c.m.head1.b.back()[0] = 2.5;
  std::vector<double> y(6, 2.5);
  LossWeights w;
  w.lambda_reg = 0.0;
  CHECK(smrl::loss_factual(c.m, c.x, c.z, y, w) == doctest::Approx(0.0));

  // yhat == y + 1 everywhere.
  c.m.head0.b.back()[0] = 3.5;
  c.m.head1.b.back()[0] = 3.5;
  CHECK(smrl::loss_factual(c.m, c.x, c.z, y, w) == doctest::Approx(1.0));

  // Random case against a per-sample loop plus the explicit weight-norm sum.
  SmallCase d = make_case(901);
  LossWeights wd;
  wd.lambda_reg = 0.01;
  const Matrix r = smrl::forward_rep(d.m, d.x);
  const auto both = smrl::forward_outcome_both(d.m, r);
  double ref = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const double yhat = d.z[i] ? both.y1[i] : both.y0[i];
    ref += (yhat - d.y[i]) * (yhat - d.y[i]) / 6.0;
  }
  double wnorm = 0.0;
  for (const auto& wm : d.m.rep.w)
    for (double v : wm.data()) wnorm += v * v;
  ref += 0.01 * wnorm;
  CHECK(smrl::loss_factual(d.m, d.x, d.z, d.y, wd) == doctest::Approx(ref).epsilon(1e-12));
  CHECK(smrl::loss_factual(d.m, d.x, d.z, d.y, wd) >= 0.0);

  std::vector<double> bad = d.y;
  bad[3] = std::nan("");
  CHECK_THROWS_WITH_AS(smrl::loss_factual(d.m, d.x, d.z, bad, wd), doctest::Contains("row 3"),
                       std::invalid_argument);
  CHECK_THROWS_AS(smrl::loss_factual(d.m, d.x, {0, 1}, d.y, wd), std::invalid_argument);
}

TEST_CASE("gradient contract: all four losses vs central differences") {
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    SmallCase c = make_case(seed);
    LossWeights w;
    w.lambda_reg = 0.01;

    // L_D over discriminator parameters.
    {
      const Matrix r0 = c.r0(), r1 = c.r1();
      ParamSet g = ParamSet::zeros(c.m.disc_cfg);
      smrl::loss_disc_grad(c.m.disc_cfg, c.m.disc, r0, r1, g);
      auto f = [&](const ParamSet& q) { return smrl::loss_disc(c.m.disc_cfg, q, r0, r1); };
      check_fd(g.flatten(), smrl::finite_diff_grad(f, c.m.disc));
    }

    // L_Phi through the representation, discriminator frozen.
    {
      std::vector<std::size_t> idx0;
      for (std::size_t i = 0; i < c.z.size(); ++i)
        if (c.z[i] == 0) idx0.push_back(i);
      const Matrix x0 = smrl::select_rows(c.x, idx0);
      smrl::ForwardCache cache;
      const Matrix r0 = smrl::mlp_forward(c.m.rep_cfg, c.m.rep, x0, &cache);
      Matrix d_r0;
      smrl::loss_balance_grad(c.m.disc_cfg, c.m.disc, r0, d_r0);
      ParamSet g = ParamSet::zeros(c.m.rep_cfg);
      smrl::mlp_backward(c.m.rep_cfg, c.m.rep, cache, d_r0, g);
      auto f = [&](const ParamSet& q) {
        return smrl::loss_balance(c.m.disc_cfg, c.m.disc, smrl::mlp_forward(c.m.rep_cfg, q, x0));
      };
      check_fd(g.flatten(), smrl::finite_diff_grad(f, c.m.rep));
    }

    // L_RSK through the representation.
    {
      smrl::ForwardCache cache;
      const Matrix r = smrl::mlp_forward(c.m.rep_cfg, c.m.rep, c.x, &cache);
      Matrix d_r;
      smrl::loss_rsk_grad(c.x, r, w, d_r);
      ParamSet g = ParamSet::zeros(c.m.rep_cfg);
      smrl::mlp_backward(c.m.rep_cfg, c.m.rep, cache, d_r, g);
      auto f = [&](const ParamSet& q) {
        return smrl::loss_rsk(c.x, smrl::mlp_forward(c.m.rep_cfg, q, c.x), w).loss_value;
      };
      check_fd(g.flatten(), smrl::finite_diff_grad(f, c.m.rep));
    }

    // L_FL over representation and both heads.
    {
      ParamSet grep = ParamSet::zeros(c.m.rep_cfg);
      ParamSet g0 = ParamSet::zeros(c.m.head_cfg);
      ParamSet g1 = ParamSet::zeros(c.m.head_cfg);
      smrl::loss_factual_grad(c.m, c.x, c.z, c.y, w, grep, g0, g1);
      auto frep = [&](const ParamSet& q) {
        ModelBundle mm = c.m;
        mm.rep = q;
        return smrl::loss_factual(mm, c.x, c.z, c.y, w);
      };
      check_fd(grep.flatten(), smrl::finite_diff_grad(frep, c.m.rep));
      auto fh0 = [&](const ParamSet& q) {
        ModelBundle mm = c.m;
        mm.head0 = q;
        return smrl::loss_factual(mm, c.x, c.z, c.y, w);
      };
      check_fd(g0.flatten(), smrl::finite_diff_grad(fh0, c.m.head0));
      auto fh1 = [&](const ParamSet& q) {
        ModelBundle mm = c.m;
        mm.head1 = q;
        return smrl::loss_factual(mm, c.x, c.z, c.y, w);
      };
      check_fd(g1.flatten(), smrl::finite_diff_grad(fh1, c.m.head1));
    }
  }
}

TEST_CASE("losses are nonnegative on random instances") {
  for (std::uint64_t seed = 300; seed < 305; ++seed) {
    SmallCase c = make_case(seed);
    LossWeights w;
    CHECK(smrl::loss_disc(c.m.disc_cfg, c.m.disc, c.r0(), c.r1()) >= 0.0);
    CHECK(smrl::loss_balance(c.m.disc_cfg, c.m.disc, c.r0()) >= 0.0);
    CHECK(smrl::loss_factual(c.m, c.x, c.z, c.y, w) >= 0.0);
  }
}

TEST_CASE("LossWeights validation") {
  LossWeights w;
  w.alpha = -1.0;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  LossWeights k;
  CHECK(k.resolved_k(15, 100) == 10);
  CHECK(k.resolved_k(3, 100) == 3);
  k.k = 5;
  CHECK(k.resolved_k(15, 100) == 5);
  CHECK_THROWS_AS(k.resolved_k(4, 4), std::invalid_argument);
}
