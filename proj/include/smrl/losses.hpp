#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "smrl/matrix.hpp"
#include "smrl/mlp.hpp"

namespace smrl {

/// Loss mixing weights and structure-keeper hyperparameters.
///   alpha      weight on the structure-keeper term
///   beta       weight on the balancing term
///   lambda_reg weight decay on representation-layer weights
///   lambda1/2  ridge added to the input / representation covariances
///   k          how many leading correlations the structure keeper sums;
///              0 means "resolve to min(P, d, 10)" at the call site
struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double lambda_reg = 1e-4;
  double lambda1 = 1e-3;
  double lambda2 = 1e-3;
  std::size_t k = 0;

  std::size_t resolved_k(std::size_t p, std::size_t d) const {
    const std::size_t cap = std::min(p, d);
    if (k == 0) return std::min(cap, std::size_t{10});
    if (k > cap)
      throw std::invalid_argument("LossWeights: k = " + std::to_string(k) +
                                  " exceeds min(input dim, representation dim) = " +
                                  std::to_string(cap));
    return k;
  }

  void validate() const {
    if (alpha < 0.0 || beta < 0.0 || lambda_reg < 0.0 || lambda1 < 0.0 || lambda2 < 0.0)
      throw std::invalid_argument("LossWeights: weights and ridges must be nonnegative");
  }
};

namespace detail {

inline void require_arm_nonempty(const Matrix& r, const char* which, const char* fn) {
  if (r.rows() == 0)
    throw std::invalid_argument(std::string(fn) + ": " + which + " arm is empty");
}

}  // namespace detail

/// Least-squares discriminator objective. The discriminator is pushed to
/// output +1 on control-arm representations and -1 on treated-arm ones:
///   L_D = 1/2 mean_{z=0}(D(r)-1)^2 + 1/2 mean_{z=1}(D(r)+1)^2
inline double loss_disc(const MlpConfig& cfg, const ParamSet& disc, const Matrix& r0,
                        const Matrix& r1) {
  detail::require_arm_nonempty(r0, "control", "loss_disc");
  detail::require_arm_nonempty(r1, "treated", "loss_disc");
  const Matrix s0 = mlp_forward(cfg, disc, r0);
  const Matrix s1 = mlp_forward(cfg, disc, r1);
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < r0.rows(); ++i) a += (s0(i, 0) - 1.0) * (s0(i, 0) - 1.0);
  for (std::size_t i = 0; i < r1.rows(); ++i) b += (s1(i, 0) + 1.0) * (s1(i, 0) + 1.0);
  return 0.5 * a / static_cast<double>(r0.rows()) + 0.5 * b / static_cast<double>(r1.rows());
}

/// loss_disc plus its gradient with respect to the discriminator parameters,
/// accumulated into grad. Representations are treated as constants.
inline double loss_disc_grad(const MlpConfig& cfg, const ParamSet& disc, const Matrix& r0,
                             const Matrix& r1, ParamSet& grad) {
  detail::require_arm_nonempty(r0, "control", "loss_disc_grad");
  detail::require_arm_nonempty(r1, "treated", "loss_disc_grad");
  double value = 0.0;
  ForwardCache cache;
  {
    const Matrix s = mlp_forward(cfg, disc, r0, &cache);
    Matrix d_out(r0.rows(), 1);
    const double inv = 1.0 / static_cast<double>(r0.rows());
    for (std::size_t i = 0; i < r0.rows(); ++i) {
      const double e = s(i, 0) - 1.0;
      value += 0.5 * e * e * inv;
      d_out(i, 0) = e * inv;
    }
    mlp_backward(cfg, disc, cache, d_out, grad);
  }
  {
    const Matrix s = mlp_forward(cfg, disc, r1, &cache);
    Matrix d_out(r1.rows(), 1);
    const double inv = 1.0 / static_cast<double>(r1.rows());
    for (std::size_t i = 0; i < r1.rows(); ++i) {
      const double e = s(i, 0) + 1.0;
      value += 0.5 * e * e * inv;
      d_out(i, 0) = e * inv;
    }
    mlp_backward(cfg, disc, cache, d_out, grad);
  }
  return value;
}

/// Balancing objective seen by the representation: push the frozen
/// discriminator's score on the given arm toward 0,
///   L_Phi = 1/2 mean(D(r)^2).
/// Asymmetric by default (callers pass the control arm); the symmetric
/// variant is two calls, one per arm.
inline double loss_balance(const MlpConfig& cfg, const ParamSet& disc, const Matrix& r0) {
  detail::require_arm_nonempty(r0, "scored", "loss_balance");
  const Matrix s = mlp_forward(cfg, disc, r0);
  double a = 0.0;
  for (std::size_t i = 0; i < r0.rows(); ++i) a += s(i, 0) * s(i, 0);
  return 0.5 * a / static_cast<double>(r0.rows());
}

/// loss_balance plus its gradient with respect to the input representations.
/// The discriminator parameters stay frozen; d_r0 is overwritten.
inline double loss_balance_grad(const MlpConfig& cfg, const ParamSet& disc, const Matrix& r0,
                                Matrix& d_r0) {
  detail::require_arm_nonempty(r0, "scored", "loss_balance_grad");
  ForwardCache cache;
  const Matrix s = mlp_forward(cfg, disc, r0, &cache);
  Matrix d_out(r0.rows(), 1);
  double value = 0.0;
  const double inv = 1.0 / static_cast<double>(r0.rows());
  for (std::size_t i = 0; i < r0.rows(); ++i) {
    value += 0.5 * s(i, 0) * s(i, 0) * inv;
    d_out(i, 0) = s(i, 0) * inv;
  }
  ParamSet sink = ParamSet::zeros(cfg);
  d_r0 = mlp_backward(cfg, disc, cache, d_out, sink, /*want_input_grad=*/true);
  return value;
}

/// Structure-keeper result: the minimized value and the full descending list
/// of canonical correlations between inputs and representations.
struct RskResult {
  double loss_value = 0.0;
  std::vector<double> correlations;
};

namespace detail {

struct RskCore {
  Matrix a;        // (C_XX + l1 I)^{-1/2}
  Matrix b;        // (C_RR + l2 I)^{-1/2}
  Matrix t;        // a · C_XR · b
  std::size_t k;   // resolved correlation count
};

inline RskCore rsk_core(const Matrix& x, const Matrix& r, const LossWeights& w) {
  if (x.rows() != r.rows())
    throw std::invalid_argument("loss_rsk: input and representation row counts differ");
  if (x.rows() < 2) throw std::invalid_argument("loss_rsk: need at least 2 rows");
  w.validate();
  RskCore core;
  core.k = w.resolved_k(x.cols(), r.cols());
  const Matrix cxx = covariance(x, x);
  const Matrix crr = covariance(r, r);
  const Matrix cxr = covariance(x, r);
  core.a = inv_sqrt_psd(cxx, w.lambda1);
  core.b = inv_sqrt_psd(crr, w.lambda2);
  core.t = multiply(multiply(core.a, cxr), core.b);
  return core;
}

}  // namespace detail

/// Structure-keeper loss: the negated sum of the top-K ridge-regularized
/// canonical correlations between the raw inputs X and the representation R.
/// Minimizing it maximizes the retained linear structure.
inline RskResult loss_rsk(const Matrix& x, const Matrix& r, const LossWeights& w) {
  const detail::RskCore core = detail::rsk_core(x, r, w);
  RskResult out;
  out.correlations = svd_values(core.t);
  for (std::size_t i = 0; i < core.k; ++i) out.loss_value -= out.correlations[i];
  return out;
}

/// loss_rsk plus its gradient with respect to R, written to d_r (n x d).
/// X is treated as a constant. Uses the exact matrix-calculus gradient of
/// the whitened cross-covariance SVD; at a zero singular value or at an
/// exact tie across the top-K boundary the subdifferential is not a single
/// point, so a valid subgradient is returned and, for boundary ties closer
/// than 1e-9, *warning (when given) is set to a diagnostic note.
inline RskResult loss_rsk_grad(const Matrix& x, const Matrix& r, const LossWeights& w, Matrix& d_r,
                               std::string* warning = nullptr) {
  const detail::RskCore core = detail::rsk_core(x, r, w);
  const std::size_t n = x.rows();
  const std::size_t p = x.cols();
  const std::size_t d = r.cols();
  const std::size_t m = std::min(p, d);
  const std::size_t kk = core.k;

  // Left singular vectors from the p x p Gram of T; right ones recovered as
  // v_k = Tᵀu_k / sigma_k. When p > d the trailing p-d eigenvalues are zero
  // padding and never enter the top-K (K <= min(p, d)).
  const SymEigResult eig = sym_eig(multiply_a_bt(core.t, core.t));
  RskResult out;
  out.correlations.resize(m);
  for (std::size_t i = 0; i < m; ++i)
    out.correlations[i] = std::sqrt(std::max(eig.eigenvalues[i], 0.0));
  for (std::size_t i = 0; i < kk; ++i) out.loss_value -= out.correlations[i];

  if (warning && kk < m && out.correlations[kk - 1] - out.correlations[kk] < 1e-9)
    *warning =
        "structure keeper: singular values tie at the top-K boundary; gradient is a subgradient";

  const double sigma_floor = 1e-12 * std::max(out.correlations[0], 1.0);
  std::vector<std::size_t> live;
  for (std::size_t kidx = 0; kidx < kk; ++kidx)
    if (out.correlations[kidx] > sigma_floor) live.push_back(kidx);

  d_r = Matrix(n, d);
  if (live.empty()) return out;

  Matrix uk(p, live.size());
  for (std::size_t c = 0; c < live.size(); ++c)
    for (std::size_t i = 0; i < p; ++i) uk(i, c) = eig.eigenvectors(i, live[c]);
  // vk = Tᵀ·uk·diag(1/sigma)
  Matrix vk = multiply_at_b(core.t, uk);
  for (std::size_t c = 0; c < live.size(); ++c) {
    const double inv = 1.0 / out.correlations[live[c]];
    for (std::size_t i = 0; i < d; ++i) vk(i, c) *= inv;
  }

  // dSum/dC_XR = A·U_K·V_Kᵀ·B and dSum/dC_RR = -1/2·B·V_K·diag(sigma)·V_Kᵀ·B.
  const Matrix g_xr = multiply(multiply(core.a, multiply_a_bt(uk, vk)), core.b);
  Matrix vs = vk;
  for (std::size_t c = 0; c < live.size(); ++c)
    for (std::size_t i = 0; i < d; ++i) vs(i, c) *= out.correlations[live[c]];
  Matrix g_rr = multiply(multiply(core.b, multiply_a_bt(vs, vk)), core.b);
  for (double& v : g_rr.data()) v *= -0.5;

  // C_XR = XcᵀR/n and C_RR = RcᵀRc/n, so
  // dSum/dR = (Xc·G_XR + 2·Rc·G_RR)/n; the loss negates it.
  const Matrix xc = centered_columns(x);
  const Matrix rc = centered_columns(r);
  const Matrix t1 = multiply(xc, g_xr);
  const Matrix t2 = multiply(rc, g_rr);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < d_r.size(); ++i)
    d_r.data()[i] = -(t1.data()[i] + 2.0 * t2.data()[i]) * inv_n;
  return out;
}

namespace detail {

/// Squared-error outcome block on a precomputed representation: rows route
/// through the head matching their arm; returns mean((yhat - y)^2) over all
/// rows. Optionally accumulates head-parameter gradients and writes the
/// gradient with respect to the representation rows (d_r overwritten).
inline double outcome_block(const MlpConfig& head_cfg, const ParamSet& h0, const ParamSet& h1,
                            const Matrix& r, const std::vector<int>& z,
                            const std::vector<double>& y, ParamSet* g0, ParamSet* g1,
                            Matrix* d_r) {
  const std::size_t n = r.rows();
  if (z.size() != n || y.size() != n)
    throw std::invalid_argument("outcome loss: arm/outcome lengths do not match row count");
  if (n == 0) throw std::invalid_argument("outcome loss: empty batch");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(y[i]))
      throw std::invalid_argument("outcome loss: non-finite outcome at row " + std::to_string(i));
  std::vector<std::size_t> idx0, idx1;
  for (std::size_t i = 0; i < n; ++i) {
    if (z[i] == 0)
      idx0.push_back(i);
    else if (z[i] == 1)
      idx1.push_back(i);
    else
      throw std::invalid_argument("outcome loss: arm must be 0 or 1, got " + std::to_string(z[i]) +
                                  " at row " + std::to_string(i));
  }
  if (d_r) *d_r = Matrix(n, r.cols());
  double sse = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  auto run_head = [&](const std::vector<std::size_t>& idx, const ParamSet& h, ParamSet* g) {
    if (idx.empty()) return;
    const Matrix ra = select_rows(r, idx);
    ForwardCache cache;
    const Matrix s = mlp_forward(head_cfg, h, ra, g || d_r ? &cache : nullptr);
    Matrix d_out(idx.size(), 1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double e = s(i, 0) - y[idx[i]];
      sse += e * e;
      d_out(i, 0) = 2.0 * e * inv_n;
    }
    if (!g && !d_r) return;
    ParamSet sink = ParamSet::zeros(head_cfg);
    ParamSet& acc = g ? *g : sink;
    const Matrix d_in = mlp_backward(head_cfg, h, cache, d_out, acc, d_r != nullptr);
    if (d_r)
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < r.cols(); ++j) (*d_r)(idx[i], j) = d_in(i, j);
  };
  run_head(idx0, h0, g0);
  run_head(idx1, h1, g1);
  return sse * inv_n;
}

inline double rep_weight_decay(const ParamSet& rep, double lambda_reg, ParamSet* grad) {
  double sq = 0.0;
  for (std::size_t l = 0; l < rep.w.size(); ++l) {
    for (double v : rep.w[l].data()) sq += v * v;
    if (grad) add_scaled_inplace(grad->w[l], rep.w[l], 2.0 * lambda_reg);
  }
  return lambda_reg * sq;
}

}  // namespace detail

/// Factual outcome loss: mean squared error of the arm-routed head
/// predictions against observed outcomes, plus weight decay on the
/// representation-layer weight matrices (biases and heads are not decayed):
///   L_FL = 1/N sum_i (yhat_i - y_i)^2 + lambda_reg sum_l ||W_l||_F^2
inline double loss_factual(const ModelBundle& m, const Matrix& x, const std::vector<int>& z,
                           const std::vector<double>& y, const LossWeights& w) {
  const Matrix r = forward_rep(m, x);
  return detail::outcome_block(m.head_cfg, m.head0, m.head1, r, z, y, nullptr, nullptr, nullptr) +
         detail::rep_weight_decay(m.rep, w.lambda_reg, nullptr);
}

/// loss_factual plus gradients with respect to the representation net and
/// both heads, accumulated into the given ParamSets.
inline double loss_factual_grad(const ModelBundle& m, const Matrix& x, const std::vector<int>& z,
                                const std::vector<double>& y, const LossWeights& w,
                                ParamSet& d_rep, ParamSet& d_head0, ParamSet& d_head1) {
  ForwardCache cache;
  const Matrix r = mlp_forward(m.rep_cfg, m.rep, x, &cache);
  Matrix d_r;
  double value =
      detail::outcome_block(m.head_cfg, m.head0, m.head1, r, z, y, &d_head0, &d_head1, &d_r);
  mlp_backward(m.rep_cfg, m.rep, cache, d_r, d_rep);
  value += detail::rep_weight_decay(m.rep, w.lambda_reg, &d_rep);
  return value;
}

}  // namespace smrl
