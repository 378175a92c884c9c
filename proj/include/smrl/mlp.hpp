#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "smrl/matrix.hpp"
#include "smrl/rng.hpp"

namespace smrl {

enum class Activation { relu, elu, identity };
enum class OutputActivation { identity, tanh };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::elu: return "elu";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline const char* to_string(OutputActivation a) {
  return a == OutputActivation::identity ? "identity" : "tanh";
}

/// Fully-connected net shape: widths = (input, hidden..., output).
struct MlpConfig {
  std::vector<std::size_t> widths;
  Activation hidden = Activation::elu;
  OutputActivation output = OutputActivation::identity;

  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  std::size_t layer_count() const { return widths.size() - 1; }

  void validate() const {
    if (widths.size() < 2)
      throw std::invalid_argument("MlpConfig: need at least input and output widths");
    for (std::size_t w : widths)
      if (w == 0) throw std::invalid_argument("MlpConfig: zero-width layer");
  }

  static MlpConfig make(std::size_t in, std::size_t hidden_layers, std::size_t width,
                        std::size_t out, Activation act = Activation::elu,
                        OutputActivation out_act = OutputActivation::identity) {
    MlpConfig c;
    c.widths.push_back(in);
    for (std::size_t l = 0; l < hidden_layers; ++l) c.widths.push_back(width);
    c.widths.push_back(out);
    c.hidden = act;
    c.output = out_act;
    return c;
  }
};

/// Weights and biases for one MlpConfig. Doubles as a gradient accumulator;
/// flatten order (per layer: W row-major, then b) is the alignment contract
/// for optimizer state and finite differencing.
struct ParamSet {
  std::vector<Matrix> w;
  std::vector<std::vector<double>> b;

  static ParamSet zeros(const MlpConfig& cfg) {
    ParamSet p;
    for (std::size_t l = 0; l + 1 < cfg.widths.size(); ++l) {
      p.w.emplace_back(cfg.widths[l], cfg.widths[l + 1]);
      p.b.emplace_back(cfg.widths[l + 1], 0.0);
    }
    return p;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < w.size(); ++l) n += w[l].size() + b[l].size();
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(count());
    for (std::size_t l = 0; l < w.size(); ++l) {
      out.insert(out.end(), w[l].data().begin(), w[l].data().end());
      out.insert(out.end(), b[l].begin(), b[l].end());
    }
    return out;
  }

  void assign_flat(const std::vector<double>& flat) {
    if (flat.size() != count()) throw std::invalid_argument("ParamSet::assign_flat: length mismatch");
    std::size_t k = 0;
    for (std::size_t l = 0; l < w.size(); ++l) {
      for (double& v : w[l].data()) v = flat[k++];
      for (double& v : b[l]) v = flat[k++];
    }
  }

  void fill(double value) {
    for (auto& m : w)
      for (double& v : m.data()) v = value;
    for (auto& bl : b)
      for (double& v : bl) v = value;
  }

  void add_scaled(const ParamSet& other, double s) {
    for (std::size_t l = 0; l < w.size(); ++l) {
      add_scaled_inplace(w[l], other.w[l], s);
      for (std::size_t j = 0; j < b[l].size(); ++j) b[l][j] += s * other.b[l][j];
    }
  }

  bool all_finite() const {
    for (const auto& m : w)
      if (!m.all_finite()) return false;
    for (const auto& bl : b)
      for (double v : bl)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

enum class InitScheme { scaled, unit_normal };

inline const char* to_string(InitScheme s) {
  return s == InitScheme::scaled ? "scaled" : "unit_normal";
}

/// Weight initialization. "scaled" draws N(0, 1/fan_in), the default;
/// "unit_normal" draws standard normals and is kept behind a flag because
/// it saturates wide layers. Biases start at zero either way. Draw order is fixed: per layer, weight
/// entries row-major, then biases, so a given seed always yields the same net.
inline ParamSet init_params(const MlpConfig& cfg, std::uint64_t seed,
                            InitScheme scheme = InitScheme::scaled) {
  cfg.validate();
  Rng rng(seed);
  ParamSet p = ParamSet::zeros(cfg);
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    const double sd =
        scheme == InitScheme::unit_normal ? 1.0 : std::sqrt(1.0 / static_cast<double>(cfg.widths[l]));
    for (double& v : p.w[l].data()) v = rng.normal(0.0, sd);
  }
  return p;
}

namespace detail {

inline double act_forward(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::elu: return x > 0.0 ? x : std::expm1(x);
    case Activation::identity: return x;
  }
  return x;
}

/// Derivative at pre-activation x. relu uses the 0 subgradient at the kink.
inline double act_deriv(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::elu: return x > 0.0 ? 1.0 : std::exp(x);
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

inline double out_forward(OutputActivation a, double x) {
  return a == OutputActivation::identity ? x : std::tanh(x);
}

inline double out_deriv(OutputActivation a, double x) {
  if (a == OutputActivation::identity) return 1.0;
  const double t = std::tanh(x);
  return 1.0 - t * t;
}

}  // namespace detail

/// Per-layer intermediates kept for the backward pass.
struct ForwardCache {
  std::vector<Matrix> acts;  // acts[0] = input, acts[l+1] = layer l output
  std::vector<Matrix> pre;   // pre[l] = acts[l]*W_l + b_l
};

inline Matrix mlp_forward(const MlpConfig& cfg, const ParamSet& p, const Matrix& x,
                          ForwardCache* cache = nullptr) {
  if (x.cols() != cfg.input_width())
    throw std::invalid_argument("mlp_forward: input has " + std::to_string(x.cols()) +
                                " columns, config expects " + std::to_string(cfg.input_width()));
  if (cache) {
    cache->acts.clear();
    cache->pre.clear();
    cache->acts.push_back(x);
  }
  Matrix a = x;
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    Matrix z = multiply(a, p.w[l]);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      double* row = z.row_ptr(i);
      for (std::size_t j = 0; j < z.cols(); ++j) row[j] += p.b[l][j];
    }
    if (cache) cache->pre.push_back(z);
    const bool last = (l + 1 == p.w.size());
    Matrix out(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.size(); ++i)
      out.data()[i] = last ? detail::out_forward(cfg.output, z.data()[i])
                           : detail::act_forward(cfg.hidden, z.data()[i]);
    if (cache) cache->acts.push_back(out);
    a = std::move(out);
  }
  return a;
}

/// Backpropagation. d_out is dLoss/d(network output), shape n x output_width.
/// Parameter gradients are accumulated (+=) into grad, which must be
/// zeros_like or an existing accumulator for the same config. Returns
/// dLoss/d(input) when want_input_grad is set, else an empty matrix.
inline Matrix mlp_backward(const MlpConfig& cfg, const ParamSet& p, const ForwardCache& cache,
                           const Matrix& d_out, ParamSet& grad, bool want_input_grad = false) {
  const std::size_t layers = p.w.size();
  Matrix da = d_out;
  for (std::size_t li = layers; li-- > 0;) {
    const Matrix& z = cache.pre[li];
    Matrix dz(z.rows(), z.cols());
    const bool last = (li + 1 == layers);
    for (std::size_t i = 0; i < z.size(); ++i)
      dz.data()[i] = da.data()[i] * (last ? detail::out_deriv(cfg.output, z.data()[i])
                                          : detail::act_deriv(cfg.hidden, z.data()[i]));
    // dW = actsᵀ·dZ, db = column sums of dZ.
    Matrix dw = multiply_at_b(cache.acts[li], dz);
    add_scaled_inplace(grad.w[li], dw, 1.0);
    for (std::size_t i = 0; i < dz.rows(); ++i) {
      const double* row = dz.row_ptr(i);
      for (std::size_t j = 0; j < dz.cols(); ++j) grad.b[li][j] += row[j];
    }
    if (li > 0 || want_input_grad) da = multiply_a_bt(dz, p.w[li]);
  }
  return want_input_grad ? da : Matrix();
}

/// The three-network model: shared representation, two outcome heads, and a
/// balancing discriminator. Heads and discriminator read the representation.
struct ModelBundle {
  MlpConfig rep_cfg, head_cfg, disc_cfg;
  ParamSet rep, head0, head1, disc;

  void validate() const {
    rep_cfg.validate();
    head_cfg.validate();
    disc_cfg.validate();
    if (head_cfg.input_width() != rep_cfg.output_width())
      throw std::invalid_argument("ModelBundle: head input width != representation width");
    if (disc_cfg.input_width() != rep_cfg.output_width())
      throw std::invalid_argument("ModelBundle: discriminator input width != representation width");
    if (head_cfg.output_width() != 1)
      throw std::invalid_argument("ModelBundle: outcome heads must be scalar");
    if (disc_cfg.output_width() != 1)
      throw std::invalid_argument("ModelBundle: discriminator must be scalar");
  }

  bool all_finite() const {
    return rep.all_finite() && head0.all_finite() && head1.all_finite() && disc.all_finite();
  }
};

inline Matrix forward_rep(const ModelBundle& m, const Matrix& x, ForwardCache* cache = nullptr) {
  return mlp_forward(m.rep_cfg, m.rep, x, cache);
}

/// Potential-outcome predictions for every row under both heads.
struct HeadOutputs {
  std::vector<double> y0, y1;
};

inline HeadOutputs forward_outcome_both(const ModelBundle& m, const Matrix& r) {
  const Matrix o0 = mlp_forward(m.head_cfg, m.head0, r);
  const Matrix o1 = mlp_forward(m.head_cfg, m.head1, r);
  HeadOutputs out;
  out.y0.resize(r.rows());
  out.y1.resize(r.rows());
  for (std::size_t i = 0; i < r.rows(); ++i) {
    out.y0[i] = o0(i, 0);
    out.y1[i] = o1(i, 0);
  }
  return out;
}

/// Head output routed by the observed arm: row i goes through head z[i].
inline std::vector<double> forward_outcome(const ModelBundle& m, const Matrix& r,
                                           const std::vector<int>& z) {
  if (z.size() != r.rows())
    throw std::invalid_argument("forward_outcome: arm vector length != row count");
  const HeadOutputs both = forward_outcome_both(m, r);
  std::vector<double> y(r.rows());
  for (std::size_t i = 0; i < r.rows(); ++i) {
    if (z[i] != 0 && z[i] != 1)
      throw std::invalid_argument("forward_outcome: arm must be 0 or 1, got " +
                                  std::to_string(z[i]) + " at row " + std::to_string(i));
    y[i] = z[i] ? both.y1[i] : both.y0[i];
  }
  return y;
}

inline std::vector<double> forward_disc(const ModelBundle& m, const Matrix& r) {
  const Matrix o = mlp_forward(m.disc_cfg, m.disc, r);
  std::vector<double> s(r.rows());
  for (std::size_t i = 0; i < r.rows(); ++i) s[i] = o(i, 0);
  return s;
}

enum class OptimizerKind { adam, sgd };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

/// Adam moment buffers, aligned to ParamSet flatten order.
struct AdamState {
  std::vector<double> m, v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const ParamSet& p) {
    AdamState s;
    s.m.assign(p.count(), 0.0);
    s.v.assign(p.count(), 0.0);
    return s;
  }
};

inline void adam_step(ParamSet& p, const ParamSet& g, AdamState& st, double eta) {
  if (!g.all_finite()) throw std::runtime_error("adam_step: non-finite gradient");
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  std::size_t k = 0;
  auto update = [&](double& param, double grad) {
    st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * grad;
    st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * grad * grad;
    const double mhat = st.m[k] / bc1;
    const double vhat = st.v[k] / bc2;
    param -= eta * mhat / (std::sqrt(vhat) + st.eps);
    ++k;
  };
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    for (std::size_t i = 0; i < p.w[l].size(); ++i) update(p.w[l].data()[i], g.w[l].data()[i]);
    for (std::size_t j = 0; j < p.b[l].size(); ++j) update(p.b[l][j], g.b[l][j]);
  }
}

inline void sgd_step(ParamSet& p, const ParamSet& g, double eta) {
  if (!g.all_finite()) throw std::runtime_error("sgd_step: non-finite gradient");
  p.add_scaled(g, -eta);
}

/// Central finite differences over one ParamSet, in flatten order. f is any
/// scalar function of the params; entries are restored bit-exactly after
/// each probe. Test and gradcheck utility, not a training path.
template <typename F>
std::vector<double> finite_diff_grad(F&& f, ParamSet& p, double h = 1e-5) {
  std::vector<double> out;
  out.reserve(p.count());
  auto probe = [&](double& v) {
    const double saved = v;
    v = saved + h;
    const double fp = f(static_cast<const ParamSet&>(p));
    v = saved - h;
    const double fm = f(static_cast<const ParamSet&>(p));
    v = saved;
    out.push_back((fp - fm) / (2.0 * h));
  };
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    for (std::size_t i = 0; i < p.w[l].size(); ++i) probe(p.w[l].data()[i]);
    for (std::size_t j = 0; j < p.b[l].size(); ++j) probe(p.b[l][j]);
  }
  return out;
}

}  // namespace smrl
