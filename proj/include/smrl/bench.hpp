#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "smrl/datagen.hpp"
#include "smrl/errors.hpp"
#include "smrl/metrics.hpp"
#include "smrl/trainer.hpp"

namespace smrl {

// ---------------------------------------------------------------------------
// Grid configuration
// ---------------------------------------------------------------------------

/// Monte-Carlo study: models x cohort sizes x replicates x methods. Every
/// replicate's seed comes from the ledger, so reruns and parallel runs are
/// reproducible. sim_base/train_base carry shared settings; the grid fields
/// (outcome model, n, seed, ablation) are overwritten per run.
struct BenchConfig {
  std::vector<int> models = {1};
  std::vector<std::size_t> ns = {500};
  std::size_t reps = 10;
  std::vector<Ablation> methods = {Ablation::v0, Ablation::v1, Ablation::v2, Ablation::full};
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0 = one per available core
  SimConfig sim_base;
  TrainConfig train_base;

  void validate() const {
    if (models.empty()) throw ConfigError("bench: models grid is empty");
    for (int m : models)
      if (m < 1 || m > 3)
        throw ConfigError("bench: outcome model must be 1, 2, or 3, got " + std::to_string(m));
    if (ns.empty()) throw ConfigError("bench: ns grid is empty");
    for (std::size_t n : ns)
      if (n < 2) throw ConfigError("bench: n must be >= 2, got " + std::to_string(n));
    if (reps < 1) throw ConfigError("bench: reps must be >= 1");
    if (methods.empty()) throw ConfigError("bench: methods list is empty");
    for (std::size_t i = 0; i < methods.size(); ++i)
      for (std::size_t j = i + 1; j < methods.size(); ++j)
        if (methods[i] == methods[j])
          throw ConfigError(std::string("bench: method '") + to_string(methods[i]) +
                            "' appears twice");
  }
};

/// Replicate seed, derived from the master seed and the cell coordinates.
/// All methods within a cell share it: same cohort, same initialization.
inline std::uint64_t bench_seed(std::uint64_t master, int model, std::size_t n, std::size_t rep) {
  return derive_seed(master, "bench.m" + std::to_string(model) + ".n" + std::to_string(n) +
                                 ".rep" + std::to_string(rep));
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct BenchRow {
  int model = 0;
  std::size_t n = 0;
  Ablation method = Ablation::full;
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  std::string status = "ok";  // "ok" or "failed: <reason>"
  std::size_t epochs = 0;
  std::string stop_reason;
  double pehe = std::numeric_limits<double>::quiet_NaN();
  double sqrt_pehe = std::numeric_limits<double>::quiet_NaN();
  double ate_bias = std::numeric_limits<double>::quiet_NaN();

  bool ok() const { return status == "ok"; }
};

struct BenchAggregate {
  int model = 0;
  std::size_t n = 0;
  Ablation method = Ablation::full;
  std::size_t n_ok = 0;
  std::size_t n_failed = 0;
  double pehe_mean, pehe_sd;
  double sqrt_pehe_mean, sqrt_pehe_sd;
  double ate_mean, ate_sd;
};

struct SeedLedgerEntry {
  int model;
  std::size_t n;
  std::size_t rep;
  std::uint64_t seed;
};

struct BenchResult {
  std::vector<BenchRow> rows;            // one per (model, n, rep, method), grid order
  std::vector<BenchAggregate> aggregates;  // one per (model, n, method), grid order
  std::vector<SeedLedgerEntry> ledger;   // one per (model, n, rep), grid order
};

namespace detail {

/// Mean and sample SD (n-1). One value: SD is undefined and stays NaN.
inline void mean_sd(const std::vector<double>& v, double& mean, double& sd) {
  mean = std::numeric_limits<double>::quiet_NaN();
  sd = std::numeric_limits<double>::quiet_NaN();
  if (v.empty()) return;
  double s = 0.0;
  for (double x : v) s += x;
  mean = s / static_cast<double>(v.size());
  if (v.size() < 2) return;
  double q = 0.0;
  for (double x : v) q += (x - mean) * (x - mean);
  sd = std::sqrt(q / static_cast<double>(v.size() - 1));
}

/// One cell: generate the cohort once, then train and score every method on
/// it. Failures are recorded per method row, never thrown.
inline void run_bench_cell(const BenchConfig& cfg, int model, std::size_t n, std::size_t rep,
                           std::uint64_t seed, BenchRow* out) {
  for (std::size_t mj = 0; mj < cfg.methods.size(); ++mj) {
    BenchRow& row = out[mj];
    row.model = model;
    row.n = n;
    row.method = cfg.methods[mj];
    row.rep = rep;
    row.seed = seed;
  }
  Dataset data;
  try {
    SimConfig sc = cfg.sim_base;
    sc.outcome_model = model;
    sc.n = n;
    sc.seed = seed;
    data = make_dataset(sc);
  } catch (const std::exception& ex) {
    for (std::size_t mj = 0; mj < cfg.methods.size(); ++mj)
      out[mj].status = std::string("failed: ") + ex.what();
    return;
  }
  double tau_mean = 0.0;
  for (double t : *data.tau) tau_mean += t;
  tau_mean /= static_cast<double>(data.n());

  for (std::size_t mj = 0; mj < cfg.methods.size(); ++mj) {
    BenchRow& row = out[mj];
    try {
      TrainConfig tc = cfg.train_base;
      tc.ablation = cfg.methods[mj];
      tc.seed = seed;
      const TrainOutput res = train(data, tc);
      row.epochs = res.history.epochs.size();
      row.stop_reason = to_string(res.history.stop_reason);
      const IteEstimate est = predict_ite(res.model, data.x);
      row.pehe = pehe(est.tau_hat, *data.mu1, *data.mu0);
      row.sqrt_pehe = std::sqrt(row.pehe);
      row.ate_bias = ate_bias(est.tau_hat, tau_mean);
    } catch (const std::exception& ex) {
      row.status = std::string("failed: ") + ex.what();
    }
  }
}

}  // namespace detail

/// Runs the whole grid. Cells fan out to a bounded worker pool; every cell
/// writes to its own preallocated row slots, so worker count never changes
/// the result. Aggregates cover ok rows only and count exclusions.
inline BenchResult run_bench(const BenchConfig& cfg) {
  cfg.validate();
  cfg.train_base.validate();

  struct Cell {
    int model;
    std::size_t n, rep;
    std::uint64_t seed;
    std::size_t slot;  // first row index for this cell
  };
  std::vector<Cell> cells;
  BenchResult result;
  for (int model : cfg.models)
    for (std::size_t n : cfg.ns)
      for (std::size_t rep = 0; rep < cfg.reps; ++rep) {
        const std::uint64_t seed = bench_seed(cfg.seed, model, n, rep);
        cells.push_back({model, n, rep, seed, cells.size() * cfg.methods.size()});
        result.ledger.push_back({model, n, rep, seed});
      }
  result.rows.resize(cells.size() * cfg.methods.size());

  std::size_t workers = cfg.workers;
  if (workers == 0) {
    workers = std::thread::hardware_concurrency();
    if (workers == 0) workers = 1;
  }
  workers = std::min(workers, cells.size());

  std::atomic<std::size_t> next{0};
  auto drain = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const Cell& c = cells[i];
      detail::run_bench_cell(cfg, c.model, c.n, c.rep, c.seed, result.rows.data() + c.slot);
    }
  };
  if (workers <= 1) {
    drain();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(drain);
    for (auto& t : pool) t.join();
  }

  // aggregate in grid order, single writer
  for (int model : cfg.models)
    for (std::size_t n : cfg.ns)
      for (std::size_t mj = 0; mj < cfg.methods.size(); ++mj) {
        BenchAggregate agg;
        agg.model = model;
        agg.n = n;
        agg.method = cfg.methods[mj];
        std::vector<double> pehes, sqrts, ates;
        for (const BenchRow& row : result.rows) {
          if (row.model != model || row.n != n || row.method != cfg.methods[mj]) continue;
          if (!row.ok()) {
            ++agg.n_failed;
            continue;
          }
          ++agg.n_ok;
          pehes.push_back(row.pehe);
          sqrts.push_back(row.sqrt_pehe);
          ates.push_back(row.ate_bias);
        }
        detail::mean_sd(pehes, agg.pehe_mean, agg.pehe_sd);
        detail::mean_sd(sqrts, agg.sqrt_pehe_mean, agg.sqrt_pehe_sd);
        detail::mean_sd(ates, agg.ate_mean, agg.ate_sd);
        result.aggregates.push_back(agg);
      }
  return result;
}

// ---------------------------------------------------------------------------
// Table rendering
// ---------------------------------------------------------------------------

/// "m.mm ± s.ss" with two decimals, the convention of the result tables.
inline std::string format_mean_sd(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", mean, sd);
  return buf;
}

/// Aligned-text aggregate table, one row per (model, n, method).
inline std::string bench_table(const BenchResult& res) {
  std::vector<std::vector<std::string>> grid;
  grid.push_back({"model", "n", "method", "reps", "eps_pehe", "sqrt_pehe", "eps_ate"});
  for (const BenchAggregate& a : res.aggregates) {
    grid.push_back({std::to_string(a.model), std::to_string(a.n), to_string(a.method),
                    std::to_string(a.n_ok) + "/" + std::to_string(a.n_ok + a.n_failed),
                    format_mean_sd(a.pehe_mean, a.pehe_sd),
                    format_mean_sd(a.sqrt_pehe_mean, a.sqrt_pehe_sd),
                    format_mean_sd(a.ate_mean, a.ate_sd)});
  }
  std::vector<std::size_t> width(grid[0].size(), 0);
  // the ± sign is two bytes in UTF-8 but one column on screen
  auto display_len = [](const std::string& s) {
    std::size_t len = 0;
    for (char c : s)
      if ((c & 0xC0) != 0x80) ++len;
    return len;
  };
  for (const auto& row : grid)
    for (std::size_t j = 0; j < row.size(); ++j) width[j] = std::max(width[j], display_len(row[j]));
  std::string out;
  for (const auto& row : grid) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      out += row[j];
      if (j + 1 < row.size()) out.append(width[j] - display_len(row[j]) + 2, ' ');
    }
    out += '\n';
  }
  return out;
}

}  // namespace smrl
