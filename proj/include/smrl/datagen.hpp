#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "smrl/csv.hpp"
#include "smrl/errors.hpp"
#include "smrl/matrix.hpp"
#include "smrl/rng.hpp"

namespace smrl {

inline double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class CoefficientSource { fixed, resample };

struct SimConfig {
  std::size_t n = 1000;
  std::size_t p = 15;
  double rho = 0.3;     // equicorrelation between covariate pairs
  double sigma2 = 1.0;  // marginal covariate variance
  int outcome_model = 1;
  std::uint64_t seed = 0;
  CoefficientSource coefficient_source = CoefficientSource::fixed;

  void validate() const {
    if (n < 2) throw ConfigError("sim: n must be >= 2, got " + std::to_string(n));
    if (p < 1) throw ConfigError("sim: p must be >= 1, got " + std::to_string(p));
    if (!(rho >= 0.0 && rho < 1.0))
      throw ConfigError("sim: rho must lie in [0,1), got " + std::to_string(rho));
    if (!(sigma2 > 0.0))
      throw ConfigError("sim: sigma2 must be > 0, got " + std::to_string(sigma2));
    if (outcome_model < 1 || outcome_model > 3)
      throw ConfigError("sim: outcome model must be 1, 2, or 3, got " +
                        std::to_string(outcome_model));
    if (outcome_model == 2 && p < 4)
      throw ConfigError("sim: outcome model 2 reads covariates x1..x4, needs p >= 4");
  }
};

/// Coefficient vectors for the three synthetic outcome models and the
/// assignment logit. fixed mode pins the realized 15-dimensional
/// vectors; resample mode redraws them from their generating distributions.
struct SurfaceCoefficients {
  std::vector<double> alpha;     // assignment logit weights
  std::vector<double> beta0_m1;  // model 1 baseline
  std::vector<double> beta1_m1;  // model 1 effect slope
  std::vector<double> beta0_m2;  // model 2 baseline
  std::vector<double> beta0_m3;  // model 3 baseline (also drives its exp surface)

  static SurfaceCoefficients fixed() {
    SurfaceCoefficients c;
    c.alpha = {0.8, -0.8, -1, -0.8, 0.2, -0.4, 1, 0.6, 0.2, 0.6, -0.2, -0.4, -1, 0.6, 0.4};
    c.beta0_m1 = {1.2, 1.1, 1.0, 1.8, 1.6, 2.0, 1.2, 1.3, 1.4, 1.1, 1.5, 1.1, 1.1, 1.0, 1.7};
    c.beta1_m1 = {1.5, 1.0, 1.9, 2.0, 1.5, 2.0, 2.0, 1.7, 2.0, 1.5, 1.4, 1.6, 1.9, 1.2, 1.2};
    c.beta0_m2 = {-5, 4, 3, -2, -2, -5, -2, 2, -2, 1, -3, -5, 4, 5, -4};
    c.beta0_m3 = {0.1, 0.2, 0.3, 0.1, 0, 0.3, 0, 0, 0, 0, 0, 0.1, 0, 0, 0.3};
    return c;
  }

  /// Redraw all vectors at dimension p. Draw order is fixed (alpha, then the
  /// four beta vectors in declaration order) so a seed pins every vector.
  static SurfaceCoefficients resample(std::size_t p, Rng& rng) {
    SurfaceCoefficients c;
    c.alpha.resize(p);
    for (double& v : c.alpha) v = rng.uniform(-1.0, 1.0);
    c.beta0_m1.resize(p);
    for (double& v : c.beta0_m1) v = rng.uniform(1.0, 2.0);
    c.beta1_m1.resize(p);
    for (double& v : c.beta1_m1) v = rng.uniform(1.0, 2.0);
    c.beta0_m2.resize(p);
    for (double& v : c.beta0_m2) v = rng.uniform(-5.0, 5.0);
    c.beta0_m3.resize(p);
    for (double& v : c.beta0_m3) {
      // values (0, 0.1, 0.2, 0.3, 0.4) with probabilities (0.6, 0.1, 0.1, 0.1, 0.1)
      const double u = rng.uniform();
      if (u < 0.6) v = 0.0;
      else if (u < 0.7) v = 0.1;
      else if (u < 0.8) v = 0.2;
      else if (u < 0.9) v = 0.3;
      else v = 0.4;
    }
    return c;
  }

  void validate(std::size_t p) const {
    auto check = [p](const std::vector<double>& v, const char* name) {
      if (v.size() != p)
        throw ConfigError(std::string("coefficients: ") + name + " has length " +
                          std::to_string(v.size()) + ", expected " + std::to_string(p));
    };
    check(alpha, "alpha");
    check(beta0_m1, "beta0_m1");
    check(beta1_m1, "beta1_m1");
    check(beta0_m2, "beta0_m2");
    check(beta0_m3, "beta0_m3");
  }
};

// ---------------------------------------------------------------------------
// Dataset container
// ---------------------------------------------------------------------------

/// A cohort: covariates, binary treatment, factual outcome, and (when known)
/// the noiseless potential-outcome surfaces, true effect, and propensity.
/// Simulated cohorts carry all truth fields; loaded CSVs carry what the file
/// provides. `noise` records the factual residual draw for bookkeeping; it is
/// never exported.
struct Dataset {
  Matrix x;
  std::vector<int> z;
  std::vector<double> yf;
  std::optional<std::vector<double>> mu0;
  std::optional<std::vector<double>> mu1;
  std::optional<std::vector<double>> tau;
  std::optional<std::vector<double>> e;
  std::optional<std::vector<double>> noise;
  std::optional<std::vector<int>> rct;  // 1 = row belongs to the randomized subset
  bool binary_outcome = false;

  std::size_t n() const { return x.rows(); }
  std::size_t p() const { return x.cols(); }

  void validate() const {
    const std::size_t rows = x.rows();
    auto check_len = [rows](std::size_t got, const char* name) {
      if (got != rows)
        throw DataError(std::string("dataset: ") + name + " has length " + std::to_string(got) +
                        ", expected " + std::to_string(rows));
    };
    check_len(z.size(), "z");
    check_len(yf.size(), "yF");
    if (!x.all_finite()) throw DataError("dataset: covariates contain non-finite values");
    for (std::size_t i = 0; i < rows; ++i) {
      if (z[i] != 0 && z[i] != 1)
        throw DataError("dataset: z[" + std::to_string(i) + "] = " + std::to_string(z[i]) +
                        ", must be 0 or 1");
      if (!std::isfinite(yf[i]))
        throw DataError("dataset: yF[" + std::to_string(i) + "] is not finite");
    }
    auto check_opt = [&](const std::optional<std::vector<double>>& v, const char* name) {
      if (!v) return;
      check_len(v->size(), name);
      for (std::size_t i = 0; i < rows; ++i)
        if (!std::isfinite((*v)[i]))
          throw DataError(std::string("dataset: ") + name + "[" + std::to_string(i) +
                          "] is not finite");
    };
    check_opt(mu0, "mu0");
    check_opt(mu1, "mu1");
    check_opt(tau, "tau");
    check_opt(e, "e");
    check_opt(noise, "noise");
    if (e)
      for (std::size_t i = 0; i < rows; ++i)
        if (!((*e)[i] > 0.0 && (*e)[i] < 1.0))
          throw DataError("dataset: propensity e[" + std::to_string(i) + "] = " +
                          std::to_string((*e)[i]) + " violates 0 < e < 1");
    if (rct) check_len(rct->size(), "rct");
  }
};

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Equicorrelated Gaussian covariates: rows i.i.d. N(0, sigma2·[(1-rho)I + rho·11']).
/// Per row the draw order is one shared factor g then p idiosyncratic normals;
/// g is drawn even at rho = 0 so the stream layout does not depend on rho.
inline Matrix gen_covariates(const SimConfig& cfg, Rng& rng) {
  cfg.validate();
  const double s = std::sqrt(cfg.sigma2);
  const double a = std::sqrt(cfg.rho);
  const double b = std::sqrt(1.0 - cfg.rho);
  Matrix x(cfg.n, cfg.p);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const double g = rng.normal();
    double* row = x.row_ptr(i);
    for (std::size_t j = 0; j < cfg.p; ++j) row[j] = s * (a * g + b * rng.normal());
  }
  return x;
}

struct Assignment {
  std::vector<int> z;
  std::vector<double> e;
};

namespace detail {

/// The logistic of a finite score is strictly interior, but for |t| beyond
/// ~37 the double rounds to exactly 0 or 1. Nudge saturated values to the
/// nearest interior double so stored propensities keep 0 < e < 1.
inline double interior_propensity(double t) {
  const double e = logistic(t);
  if (e <= 0.0) return 1e-15;
  if (e >= 1.0) return 1.0 - 1e-15;
  return e;
}

}  // namespace detail

/// Logistic treatment assignment: e_i = logistic(x_i'alpha), z_i ~ Bernoulli(e_i).
inline Assignment gen_assignment(const Matrix& x, const std::vector<double>& alpha, Rng& rng) {
  if (alpha.size() != x.cols())
    throw ConfigError("assignment: alpha has length " + std::to_string(alpha.size()) +
                      ", covariates have " + std::to_string(x.cols()) + " columns");
  Assignment a;
  a.z.resize(x.rows());
  a.e.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* row = x.row_ptr(i);
    double t = 0.0;
    for (std::size_t j = 0; j < alpha.size(); ++j) t += row[j] * alpha[j];
    a.e[i] = detail::interior_propensity(t);
    a.z[i] = rng.bernoulli(a.e[i]) ? 1 : 0;
  }
  return a;
}

struct Surfaces {
  std::vector<double> mu0;
  std::vector<double> mu1;
  std::vector<double> tau;
};

namespace detail {

inline double dot(const double* x, const std::vector<double>& b) {
  double t = 0.0;
  for (std::size_t j = 0; j < b.size(); ++j) t += x[j] * b[j];
  return t;
}

/// One row of the outcome surfaces. mu1 is always built so that the stored
/// tau equals mu1 - mu0 bitwise.
inline void surface_row(int model, const SurfaceCoefficients& c, const double* x, double& mu0,
                        double& mu1, double& tau) {
  switch (model) {
    case 1: {
      mu0 = dot(x, c.beta0_m1);
      mu1 = mu0 + (dot(x, c.beta1_m1) + 2.0);
      break;
    }
    case 2: {
      mu0 = dot(x, c.beta0_m2);
      double t = 0.0;
      if (x[0] > 0.5) t += 0.5;
      if (x[1] > 0.3) t += 1.0;
      if (x[2] > 0.0 && x[3] > 0.2) t += 2.0;
      mu1 = mu0 + t;
      break;
    }
    case 3: {
      const double s = dot(x, c.beta0_m3);
      double shift = 0.0;
      for (double b : c.beta0_m3) shift += b;
      mu0 = s;
      mu1 = std::exp(s + 0.5 * shift);
      break;
    }
    default:
      throw ConfigError("surfaces: unknown outcome model " + std::to_string(model));
  }
  tau = mu1 - mu0;
}

}  // namespace detail

inline Surfaces outcome_surfaces(const Matrix& x, int model, const SurfaceCoefficients& coeffs) {
  coeffs.validate(x.cols());
  if (model == 2 && x.cols() < 4)
    throw ConfigError("surfaces: outcome model 2 reads covariates x1..x4, needs p >= 4");
  Surfaces s;
  s.mu0.resize(x.rows());
  s.mu1.resize(x.rows());
  s.tau.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    detail::surface_row(model, coeffs, x.row_ptr(i), s.mu0[i], s.mu1[i], s.tau[i]);
  return s;
}

/// Coefficients implied by cfg: the pinned vectors (which require p = 15) or a
/// seed-determined redraw from their generating distributions.
inline SurfaceCoefficients coefficients_for(const SimConfig& cfg) {
  if (cfg.coefficient_source == CoefficientSource::fixed) {
    if (cfg.p != 15)
      throw ConfigError("sim: fixed coefficients are 15-dimensional; p = " +
                        std::to_string(cfg.p) + " requires coefficient_source = resample");
    return SurfaceCoefficients::fixed();
  }
  Rng rng = Rng::stream(cfg.seed, "sim.coefficients");
  return SurfaceCoefficients::resample(cfg.p, rng);
}

/// Full synthetic cohort. Purpose-named RNG streams keep each stage's draws
/// independent of the others, so changing one stage never perturbs the rest.
/// The factual outcome is yF_i = mu_{z_i}(x_i) + eps_i with eps_i ~ N(0,1);
/// the stored surfaces stay noiseless.
inline Dataset make_dataset(const SimConfig& cfg) {
  cfg.validate();
  const SurfaceCoefficients coeffs = coefficients_for(cfg);
  Rng cov_rng = Rng::stream(cfg.seed, "sim.covariates");
  Rng assign_rng = Rng::stream(cfg.seed, "sim.assignment");
  Rng noise_rng = Rng::stream(cfg.seed, "sim.noise");

  Dataset d;
  d.x = gen_covariates(cfg, cov_rng);
  Assignment a = gen_assignment(d.x, coeffs.alpha, assign_rng);
  d.z = std::move(a.z);
  d.e = std::move(a.e);
  Surfaces s = outcome_surfaces(d.x, cfg.outcome_model, coeffs);
  d.mu0 = std::move(s.mu0);
  d.mu1 = std::move(s.mu1);
  d.tau = std::move(s.tau);
  d.noise.emplace(cfg.n);
  d.yf.resize(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const double eps = noise_rng.normal();
    (*d.noise)[i] = eps;
    d.yf[i] = (d.z[i] ? (*d.mu1)[i] : (*d.mu0)[i]) + eps;
  }
  d.validate();
  return d;
}

/// Super-population average effect: mean of tau over m fresh covariate draws
/// from cfg's covariate distribution. Streams off "sim.true_ate" so it never
/// shares draws with make_dataset.
inline double true_ate(const SimConfig& cfg, const SurfaceCoefficients& coeffs, std::size_t m,
                       std::uint64_t seed) {
  cfg.validate();
  coeffs.validate(cfg.p);
  Rng rng = Rng::stream(seed, "sim.true_ate");
  const double sg = std::sqrt(cfg.sigma2);
  const double a = std::sqrt(cfg.rho);
  const double b = std::sqrt(1.0 - cfg.rho);
  std::vector<double> row(cfg.p);
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double g = rng.normal();
    for (std::size_t j = 0; j < cfg.p; ++j) row[j] = sg * (a * g + b * rng.normal());
    double mu0 = 0.0, mu1 = 0.0, tau = 0.0;
    detail::surface_row(cfg.outcome_model, coeffs, row.data(), mu0, mu1, tau);
    sum += tau;
  }
  return sum / static_cast<double>(m);
}

inline double true_ate(const SimConfig& cfg, std::size_t m = 100000) {
  return true_ate(cfg, coefficients_for(cfg), m, cfg.seed);
}

/// High-dimensional variant: model 1 with all coefficient vectors redrawn at
/// dimension p from their generating distributions (the pinned vectors only
/// exist at p = 15, so this extension is a documented reconstruction).
inline std::pair<SimConfig, SurfaceCoefficients> highdim_config(std::size_t p, std::size_t n,
                                                              std::uint64_t seed) {
  static constexpr std::size_t grid[] = {50, 100, 200, 400, 800};
  if (std::find(std::begin(grid), std::end(grid), p) == std::end(grid))
    throw ConfigError("highdim: p must be one of {50, 100, 200, 400, 800}, got " +
                      std::to_string(p));
  SimConfig cfg;
  cfg.n = n;
  cfg.p = p;
  cfg.outcome_model = 1;
  cfg.seed = seed;
  cfg.coefficient_source = CoefficientSource::resample;
  return {cfg, coefficients_for(cfg)};
}

namespace detail {

inline Assignment biased_twins_assignment(const Matrix& x, const std::vector<double>& w0,
                                          double wh, Rng& rng) {
  Assignment a;
  a.z.resize(x.rows());
  a.e.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    a.e[i] = interior_propensity(dot(x.row_ptr(i), w0) + wh);
    a.z[i] = rng.bernoulli(a.e[i]) ? 1 : 0;
  }
  return a;
}

}  // namespace detail

/// Covariate-biased assignment for twin-style cohorts: z ~ Bernoulli(
/// logistic(w0'x + wh)) with w0 ~ N(0, 0.1·I) and wh ~ N(2, 0.1).
inline Assignment twins_assignment(const Matrix& x, std::uint64_t seed) {
  Rng wrng = Rng::stream(seed, "twins.weights");
  std::vector<double> w0(x.cols());
  const double sd = std::sqrt(0.1);
  for (double& v : w0) v = wrng.normal(0.0, sd);
  const double wh = wrng.normal(2.0, sd);
  Rng zrng = Rng::stream(seed, "twins.assign");
  return detail::biased_twins_assignment(x, w0, wh, zrng);
}

// ---------------------------------------------------------------------------
// CSV export / ingestion
// ---------------------------------------------------------------------------

/// Column roles for CSV ingestion. Empty optional names mean "not present".
struct CsvSchema {
  std::vector<std::string> covariates;
  std::string treatment;
  std::string factual;
  std::string mu0;
  std::string mu1;
  std::string tau;
  std::string propensity;
  std::string rct;
  bool binary_outcome = false;

  void validate() const {
    if (covariates.empty()) throw ConfigError("schema: needs at least one covariate column");
    if (treatment.empty()) throw ConfigError("schema: treatment column name is required");
    if (factual.empty()) throw ConfigError("schema: factual outcome column name is required");
  }
};

/// Schema matching export_csv's column layout for a p-column cohort.
inline CsvSchema default_schema(std::size_t p) {
  CsvSchema s;
  s.covariates.resize(p);
  for (std::size_t j = 0; j < p; ++j) s.covariates[j] = "x" + std::to_string(j + 1);
  s.treatment = "z";
  s.factual = "yF";
  s.mu0 = "mu0";
  s.mu1 = "mu1";
  s.tau = "tau";
  s.propensity = "e";
  return s;
}

/// Writes x1..xP, z, yF, then whichever of mu0, mu1, tau, e, rct the dataset
/// carries. Doubles go through shortest-round-trip formatting, so reloading
/// reproduces the exact values.
inline void export_csv(const Dataset& d, const std::string& path) {
  std::vector<std::string> header;
  for (std::size_t j = 0; j < d.p(); ++j) header.push_back("x" + std::to_string(j + 1));
  header.push_back("z");
  header.push_back("yF");
  if (d.mu0) header.push_back("mu0");
  if (d.mu1) header.push_back("mu1");
  if (d.tau) header.push_back("tau");
  if (d.e) header.push_back("e");
  if (d.rct) header.push_back("rct");
  std::vector<std::vector<std::string>> rows(d.n());
  for (std::size_t i = 0; i < d.n(); ++i) {
    auto& r = rows[i];
    r.reserve(header.size());
    for (std::size_t j = 0; j < d.p(); ++j) r.push_back(format_double(d.x(i, j)));
    r.push_back(std::to_string(d.z[i]));
    r.push_back(format_double(d.yf[i]));
    if (d.mu0) r.push_back(format_double((*d.mu0)[i]));
    if (d.mu1) r.push_back(format_double((*d.mu1)[i]));
    if (d.tau) r.push_back(format_double((*d.tau)[i]));
    if (d.e) r.push_back(format_double((*d.e)[i]));
    if (d.rct) r.push_back(std::to_string((*d.rct)[i]));
  }
  write_csv(path, header, rows);
}

struct LoadedDataset {
  Dataset data;
  std::vector<std::string> used_columns;
  std::size_t dropped_rows = 0;
};

namespace detail {

inline int require_binary(double v, std::size_t lineno, const std::string& col) {
  if (v == 0.0) return 0;
  if (v == 1.0) return 1;
  throw DataError("load: line " + std::to_string(lineno) + ": " + col + " value " +
                  format_double(v) + " must be 0 or 1");
}

}  // namespace detail

/// Ingests a header CSV under the given column-role schema. Rows with a
/// missing value (empty cell or NaN) in any used column are dropped and
/// counted; parse garbage and non-binary treatment/rct values are errors that
/// cite the offending line. When mu0 and mu1 are present but tau is not, tau
/// is derived as mu1 - mu0.
inline LoadedDataset load_csv(const std::string& path, const CsvSchema& schema) {
  schema.validate();
  CsvTable table;
  try {
    table = read_csv(path);
  } catch (const std::runtime_error& ex) {
    throw DataError(ex.what());
  }

  std::vector<std::string> used = schema.covariates;
  used.push_back(schema.treatment);
  used.push_back(schema.factual);
  for (const std::string* opt : {&schema.mu0, &schema.mu1, &schema.tau, &schema.propensity,
                                 &schema.rct})
    if (!opt->empty()) used.push_back(*opt);

  std::string missing;
  for (const auto& name : used)
    if (!table.has_column(name)) missing += (missing.empty() ? "" : ", ") + name;
  if (!missing.empty())
    throw DataError("load: '" + path + "' is missing columns: " + missing);

  std::vector<std::size_t> xcol(schema.covariates.size());
  for (std::size_t j = 0; j < xcol.size(); ++j) xcol[j] = table.column(schema.covariates[j]);
  const std::size_t zcol = table.column(schema.treatment);
  const std::size_t ycol = table.column(schema.factual);
  auto opt_col = [&table](const std::string& name) {
    return name.empty() ? std::optional<std::size_t>{} : std::optional<std::size_t>{table.column(name)};
  };
  const auto mu0col = opt_col(schema.mu0);
  const auto mu1col = opt_col(schema.mu1);
  const auto taucol = opt_col(schema.tau);
  const auto ecol = opt_col(schema.propensity);
  const auto rctcol = opt_col(schema.rct);

  LoadedDataset out;
  out.used_columns = used;
  Dataset& d = out.data;
  d.binary_outcome = schema.binary_outcome;
  const std::size_t p = xcol.size();
  std::vector<double> xflat;
  if (mu0col) d.mu0.emplace();
  if (mu1col) d.mu1.emplace();
  if (taucol) d.tau.emplace();
  if (ecol) d.e.emplace();
  if (rctcol) d.rct.emplace();

  std::vector<double> xrow(p);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const std::size_t lineno = i + 2;  // header is line 1
    const auto& row = table.rows[i];
    bool missing_value = false;
    auto field = [&](std::size_t c, const std::string& name) {
      const double v = parse_double_field(row[c], lineno, name);
      if (!std::isfinite(v)) missing_value = true;
      return v;
    };
    for (std::size_t j = 0; j < p; ++j) xrow[j] = field(xcol[j], schema.covariates[j]);
    const double yv = field(ycol, schema.factual);
    const double zd = field(zcol, schema.treatment);
    const double rctd = rctcol ? field(*rctcol, schema.rct) : 0.0;
    const double mu0v = mu0col ? field(*mu0col, schema.mu0) : 0.0;
    const double mu1v = mu1col ? field(*mu1col, schema.mu1) : 0.0;
    const double tauv = taucol ? field(*taucol, schema.tau) : 0.0;
    const double ev = ecol ? field(*ecol, schema.propensity) : 0.0;
    if (missing_value) {
      ++out.dropped_rows;
      continue;
    }
    // Binary validation runs after the missing check, so a blank treatment
    // cell follows the drop policy rather than erroring.
    const int zv = detail::require_binary(zd, lineno, schema.treatment);
    const int rctv = rctcol ? detail::require_binary(rctd, lineno, schema.rct) : 0;
    xflat.insert(xflat.end(), xrow.begin(), xrow.end());
    d.z.push_back(zv);
    d.yf.push_back(yv);
    if (d.mu0) d.mu0->push_back(mu0v);
    if (d.mu1) d.mu1->push_back(mu1v);
    if (d.tau) d.tau->push_back(tauv);
    if (d.e) d.e->push_back(ev);
    if (d.rct) d.rct->push_back(rctv);
  }
  if (d.z.empty()) throw DataError("load: '" + path + "' has no usable rows");
  d.x = Matrix::checked(d.z.size(), p, std::move(xflat));
  if (d.mu0 && d.mu1 && !d.tau) {
    d.tau.emplace(d.n());
    for (std::size_t i = 0; i < d.n(); ++i) (*d.tau)[i] = (*d.mu1)[i] - (*d.mu0)[i];
  }
  try {
    d.validate();
  } catch (const std::runtime_error& ex) {
    throw DataError(std::string("load: '") + path + "': " + ex.what());
  }
  return out;
}

}  // namespace smrl
