#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "smrl/datagen.hpp"
#include "smrl/errors.hpp"
#include "smrl/matrix.hpp"
#include "smrl/mlp.hpp"
#include "smrl/rng.hpp"

namespace smrl {

/// Per-replicate evaluation summary. Only metrics that make sense for the
/// task are populated; the rest stay absent rather than zero-filled.
struct EvalReport {
  std::optional<double> pehe;
  std::optional<double> sqrt_pehe;
  std::optional<double> ate_bias;
  std::optional<double> policy_risk;
  std::optional<double> att_bias;
  std::optional<double> auc;
  std::optional<double> h_div;
  std::size_t n_eval = 0;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Effect-estimation error metrics
// ---------------------------------------------------------------------------

/// Mean squared error of estimated effects against the noiseless surfaces:
/// (1/n) sum (tau_hat_i - (mu1_i - mu0_i))^2. No square root; sqrt_pehe
/// wraps it for comparisons that use the rooted convention.
inline double pehe(const std::vector<double>& tau_hat, const std::vector<double>& mu1,
                   const std::vector<double>& mu0) {
  if (tau_hat.size() != mu1.size() || tau_hat.size() != mu0.size())
    throw DataError("pehe: length mismatch (" + std::to_string(tau_hat.size()) + ", " +
                    std::to_string(mu1.size()) + ", " + std::to_string(mu0.size()) + ")");
  if (tau_hat.empty()) throw DataError("pehe: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < tau_hat.size(); ++i) {
    const double d = tau_hat[i] - (mu1[i] - mu0[i]);
    s += d * d;
  }
  return s / static_cast<double>(tau_hat.size());
}

inline double sqrt_pehe(const std::vector<double>& tau_hat, const std::vector<double>& mu1,
                        const std::vector<double>& mu0) {
  return std::sqrt(pehe(tau_hat, mu1, mu0));
}

/// |mean(tau_hat) - true_ate|.
inline double ate_bias(const std::vector<double>& tau_hat, double true_ate) {
  if (tau_hat.empty()) throw DataError("ate_bias: empty input");
  const double mean =
      std::accumulate(tau_hat.begin(), tau_hat.end(), 0.0) / static_cast<double>(tau_hat.size());
  return std::fabs(mean - true_ate);
}

// ---------------------------------------------------------------------------
// Randomized-subset metrics (binary-outcome tasks)
// ---------------------------------------------------------------------------

/// Average loss in value when treating by the sign of the estimated effect,
/// evaluated on the randomized subset E:
///   value = mean(y | treat-recommended, treated) * |Pi1 n E| / |E|
///         + mean(y | control-recommended, control, E) * |Pi0 n E| / |E|
///   risk  = 1 - value.
/// Ties (y1_hat == y0_hat) count as control-recommended: no treatment on
/// indifference. An empty conditional-mean set contributes 0; that loses the
/// weight it carried, so it is reported through `warning` when the weight was
/// nonzero.
inline double policy_risk(const std::vector<double>& y1_hat, const std::vector<double>& y0_hat,
                          const std::vector<double>& y_obs, const std::vector<int>& z,
                          const std::vector<int>& rct_mask, std::string* warning = nullptr) {
  const std::size_t n = y_obs.size();
  if (y1_hat.size() != n || y0_hat.size() != n || z.size() != n || rct_mask.size() != n)
    throw DataError("policy_risk: length mismatch");
  std::size_t n_e = 0, n_pi1 = 0, n_pi0 = 0;
  double sum1 = 0.0, sum0 = 0.0;
  std::size_t cnt1 = 0, cnt0 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!rct_mask[i]) continue;
    ++n_e;
    const bool treat = y1_hat[i] > y0_hat[i];
    if (treat) {
      ++n_pi1;
      if (z[i] == 1) {
        sum1 += y_obs[i];
        ++cnt1;
      }
    } else {
      ++n_pi0;
      if (z[i] == 0) {
        sum0 += y_obs[i];
        ++cnt0;
      }
    }
  }
  if (n_e == 0) throw DataError("policy_risk: randomized subset is empty");
  double value = 0.0;
  const double inv_e = 1.0 / static_cast<double>(n_e);
  if (cnt1 > 0)
    value += (sum1 / static_cast<double>(cnt1)) * (static_cast<double>(n_pi1) * inv_e);
  else if (n_pi1 > 0 && warning)
    *warning += "policy_risk: no treated units among treat-recommended rows; term dropped\n";
  if (cnt0 > 0)
    value += (sum0 / static_cast<double>(cnt0)) * (static_cast<double>(n_pi0) * inv_e);
  else if (n_pi0 > 0 && warning)
    *warning += "policy_risk: no control units among control-recommended rows; term dropped\n";
  return 1.0 - value;
}

/// |mean(tau_hat over treated) - ATT| with ATT = mean(y | treated) -
/// mean(y | control in E). Treated units are all of T; controls are
/// restricted to the randomized subset.
inline double att_bias(const std::vector<double>& tau_hat, const std::vector<double>& y_obs,
                       const std::vector<int>& z, const std::vector<int>& rct_mask) {
  const std::size_t n = y_obs.size();
  if (tau_hat.size() != n || z.size() != n || rct_mask.size() != n)
    throw DataError("att_bias: length mismatch");
  double sum_t = 0.0, sum_ce = 0.0, sum_tau = 0.0;
  std::size_t n_t = 0, n_ce = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (z[i] == 1) {
      sum_t += y_obs[i];
      sum_tau += tau_hat[i];
      ++n_t;
    } else if (rct_mask[i]) {
      sum_ce += y_obs[i];
      ++n_ce;
    }
  }
  if (n_t == 0) throw DataError("att_bias: no treated units");
  if (n_ce == 0) throw DataError("att_bias: no control units in the randomized subset");
  const double att = sum_t / static_cast<double>(n_t) - sum_ce / static_cast<double>(n_ce);
  return std::fabs(sum_tau / static_cast<double>(n_t) - att);
}

/// Rank-based concordance AUC with half credit for score ties. Returns
/// absent when y_true is single-class (the statistic is undefined there).
inline std::optional<double> outcome_auc(const std::vector<double>& score,
                                         const std::vector<int>& y_true) {
  const std::size_t n = score.size();
  if (y_true.size() != n) throw DataError("outcome_auc: length mismatch");
  std::size_t n_pos = 0;
  for (int y : y_true) {
    if (y != 0 && y != 1) throw DataError("outcome_auc: labels must be 0 or 1");
    n_pos += y;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&score](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  // Sum of average ranks of the positives; tied scores share their rank block.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && score[order[j]] == score[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t k = i; k < j; ++k)
      if (y_true[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

// ---------------------------------------------------------------------------
// Balance diagnostic
// ---------------------------------------------------------------------------

/// Fresh-probe settings for the balance diagnostic. Fixed and versioned so
/// the estimate is comparable across runs.
struct ProbeConfig {
  std::size_t hidden_units = 20;
  std::size_t hidden_layers = 2;
  std::size_t epochs = 200;
  double lr = 0.01;
  std::uint64_t seed = 0;
};

namespace detail {

/// Full-batch cross-entropy training of a small classifier; returns the
/// trained parameters. Labels are 0 for rows of x0, 1 for rows of x1.
inline std::pair<MlpConfig, ParamSet> train_probe(const Matrix& x, const std::vector<int>& label,
                                                  const ProbeConfig& cfg) {
  MlpConfig net;
  net.widths.push_back(x.cols());
  for (std::size_t l = 0; l < cfg.hidden_layers; ++l) net.widths.push_back(cfg.hidden_units);
  net.widths.push_back(1);
  net.hidden = Activation::relu;
  ParamSet p = init_params(net, derive_seed(cfg.seed, "probe.init"));
  AdamState st = AdamState::for_params(p);
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    ForwardCache cache;
    const Matrix out = mlp_forward(net, p, x, &cache);
    Matrix d_out(out.rows(), 1);
    for (std::size_t i = 0; i < out.rows(); ++i) {
      const double s = logistic(out(i, 0));
      d_out(i, 0) = (s - static_cast<double>(label[i])) * inv_n;
    }
    ParamSet g = ParamSet::zeros(net);
    mlp_backward(net, p, cache, d_out, g);
    adam_step(p, g, st, cfg.lr);
  }
  return {std::move(net), std::move(p)};
}

}  // namespace detail

/// Empirical two-arm distinguishability of representations, in [0,1]: train a
/// fresh probe classifier on half of each arm and report the absolute gap in
/// mean squashed score between the held-out halves. A lower-bound estimate of
/// the best achievable mean-score gap; 0 means the probe cannot tell the arms
/// apart.
inline double h_divergence(const Matrix& r0, const Matrix& r1, const ProbeConfig& cfg) {
  if (r0.cols() != r1.cols()) throw DataError("h_divergence: arm widths differ");
  if (r0.rows() < 10 || r1.rows() < 10)
    throw DataError("h_divergence: needs at least 10 rows per arm to split, got " +
                    std::to_string(r0.rows()) + " and " + std::to_string(r1.rows()));

  Rng split_rng = Rng::stream(cfg.seed, "probe.split");
  auto split = [&split_rng](std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    split_rng.shuffle(idx);
    return idx;
  };
  const std::vector<std::size_t> i0 = split(r0.rows());
  const std::vector<std::size_t> i1 = split(r1.rows());
  const std::size_t h0 = r0.rows() / 2, h1 = r1.rows() / 2;

  Matrix train(h0 + h1, r0.cols());
  std::vector<int> label(h0 + h1);
  for (std::size_t i = 0; i < h0; ++i)
    for (std::size_t j = 0; j < r0.cols(); ++j) train(i, j) = r0(i0[i], j);
  for (std::size_t i = 0; i < h1; ++i) {
    for (std::size_t j = 0; j < r1.cols(); ++j) train(h0 + i, j) = r1(i1[i], j);
    label[h0 + i] = 1;
  }
  auto [net, p] = detail::train_probe(train, label, cfg);

  auto holdout_mean = [&](const Matrix& r, const std::vector<std::size_t>& idx, std::size_t from) {
    Matrix hold(idx.size() - from, r.cols());
    for (std::size_t i = from; i < idx.size(); ++i)
      for (std::size_t j = 0; j < r.cols(); ++j) hold(i - from, j) = r(idx[i], j);
    const Matrix out = mlp_forward(net, p, hold);
    double m = 0.0;
    for (std::size_t i = 0; i < out.rows(); ++i) m += logistic(out(i, 0));
    return m / static_cast<double>(out.rows());
  };
  return std::fabs(holdout_mean(r0, i0, h0) - holdout_mean(r1, i1, h1));
}

// ---------------------------------------------------------------------------
// Propensity-matched ground-truth approximation
// ---------------------------------------------------------------------------

struct PsmResult {
  std::vector<std::size_t> treated_idx;   // matched treated units
  std::vector<std::size_t> control_idx;   // control_idx[k] pairs with treated_idx[k]
  std::vector<double> tau_tilde;          // y_treated - y_matched_control
  std::vector<double> propensity;         // fitted e(x) for every row
  std::size_t unmatched_treated = 0;      // treated left over after controls ran out
};

namespace detail {

/// Logistic-regression fit (single linear layer, full-batch cross-entropy
/// descent). Stops when the gradient max-norm falls below tol; separable
/// data never reaches tol, so the iteration cap is load-bearing.
inline std::vector<double> fit_propensity(const Matrix& x, const std::vector<int>& z, double tol,
                                          std::size_t max_iters) {
  MlpConfig net;
  net.widths = {x.cols(), 1};
  ParamSet p = ParamSet::zeros(net);  // deterministic start, convex problem
  AdamState st = AdamState::for_params(p);
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  for (std::size_t it = 0; it < max_iters; ++it) {
    ForwardCache cache;
    const Matrix out = mlp_forward(net, p, x, &cache);
    Matrix d_out(out.rows(), 1);
    for (std::size_t i = 0; i < out.rows(); ++i)
      d_out(i, 0) = (logistic(out(i, 0)) - static_cast<double>(z[i])) * inv_n;
    ParamSet g = ParamSet::zeros(net);
    mlp_backward(net, p, cache, d_out, g);
    double gmax = 0.0;
    for (double v : g.flatten()) gmax = std::max(gmax, std::fabs(v));
    if (gmax <= tol) break;
    adam_step(p, g, st, 0.05);
  }
  const Matrix out = mlp_forward(net, p, x);
  std::vector<double> e(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) e[i] = logistic(out(i, 0));
  return e;
}

}  // namespace detail

/// Matched-pair effect approximation for real data: fit a logistic propensity
/// on all covariates, then greedily give each treated unit (processed in
/// descending propensity order) the nearest-propensity control, without
/// replacement. Ties in propensity break toward the lower row index so the
/// trace is deterministic.
inline PsmResult psm_ground_truth(const Matrix& x, const std::vector<int>& z,
                                  const std::vector<double>& y_obs,
                                  std::string* warning = nullptr) {
  const std::size_t n = x.rows();
  if (z.size() != n || y_obs.size() != n) throw DataError("psm: length mismatch");
  std::vector<std::size_t> treated, controls;
  for (std::size_t i = 0; i < n; ++i) (z[i] ? treated : controls).push_back(i);
  if (controls.empty()) throw DataError("psm: no control units to match against");
  if (treated.empty()) throw DataError("psm: no treated units");

  PsmResult res;
  res.propensity = detail::fit_propensity(x, z, 1e-8, 20000);

  std::sort(treated.begin(), treated.end(), [&](std::size_t a, std::size_t b) {
    if (res.propensity[a] != res.propensity[b]) return res.propensity[a] > res.propensity[b];
    return a < b;
  });
  std::vector<bool> used(n, false);
  for (std::size_t t : treated) {
    std::size_t best = n;
    double best_gap = 0.0;
    for (std::size_t c : controls) {
      if (used[c]) continue;
      const double gap = std::fabs(res.propensity[t] - res.propensity[c]);
      if (best == n || gap < best_gap || (gap == best_gap && c < best)) {
        best = c;
        best_gap = gap;
      }
    }
    if (best == n) {
      ++res.unmatched_treated;
      continue;
    }
    used[best] = true;
    res.treated_idx.push_back(t);
    res.control_idx.push_back(best);
    res.tau_tilde.push_back(y_obs[t] - y_obs[best]);
  }
  if (res.unmatched_treated > 0 && warning)
    *warning += "psm: controls exhausted; " + std::to_string(res.unmatched_treated) +
                " treated units left unmatched\n";
  return res;
}

}  // namespace smrl
