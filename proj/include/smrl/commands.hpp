#pragma once

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "smrl/bench.hpp"
#include "smrl/checkpoint.hpp"
#include "smrl/datagen.hpp"
#include "smrl/metrics.hpp"
#include "smrl/trainer.hpp"

namespace smrl {

// Process exit codes; the library throws, run_command maps.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;       // unexpected failure
inline constexpr int kExitConfig = 2;      // ConfigError
inline constexpr int kExitData = 3;        // DataError
inline constexpr int kExitNonFinite = 4;   // training diverged
inline constexpr int kExitGradcheck = 5;   // gradient check failed

/// Options shared by every command; flags override config-file keys.
struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::optional<std::size_t> reps;
  std::optional<std::size_t> workers;
  std::string inject_error;  // gradcheck negative-control hook
};

// ---------------------------------------------------------------------------
// Config files and manifests
// ---------------------------------------------------------------------------

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestFormat = "smrl-manifest";

namespace detail {

inline std::string utc_timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline Json parse_json_file(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(what + ": cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& ex) {
    throw ConfigError(what + ": '" + path + "' is not valid JSON: " + ex.what());
  }
}

}  // namespace detail

/// Reads a command's config. An empty path means all defaults. A manifest
/// from an earlier run is accepted in place of a config: its resolved echo
/// is extracted, which is what makes reruns reproduce the original outputs.
inline Json load_config_json(const std::string& path, const std::string& command) {
  if (path.empty()) return Json::object();
  Json j = detail::parse_json_file(path, command + " config");
  if (j.is_object() && j.contains("format") && j["format"] == kManifestFormat) {
    const std::string from = j.value("command", "");
    if (from != command)
      throw ConfigError(command + ": manifest '" + path + "' records a '" + from +
                        "' run; rerun it with that command");
    if (!j.contains("config"))
      throw ConfigError(command + ": manifest '" + path + "' has no config echo");
    return j["config"];
  }
  if (!j.is_object()) throw ConfigError(command + " config: expected a JSON object");
  return j;
}

struct RunManifest {
  std::string command;
  Json config;   // fully resolved echo, valid as a config for the same command
  Json seeds = Json::array();
  Json result;   // command-specific summary (optional)
  std::string started, finished;
  std::vector<std::string> outputs;  // file names relative to the manifest
};

inline void write_manifest(const RunManifest& m, const std::string& dir) {
  Json j;
  j["format"] = kManifestFormat;
  j["version"] = kManifestVersion;
  j["command"] = m.command;
  j["config"] = m.config;
  j["seeds"] = m.seeds;
  if (!m.result.is_null()) j["result"] = m.result;
  j["started"] = m.started;
  j["finished"] = m.finished;
  j["outputs"] = m.outputs;
  const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("manifest: cannot write '" + path + "'");
  out << j.dump(2) << "\n";
  if (!out) throw DataError("manifest: write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Seeds
// ---------------------------------------------------------------------------

inline std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("SMRL_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno != 0 || end == s || *end != '\0')
    throw ConfigError(std::string("SMRL_SEED: cannot parse '") + s + "' as a seed");
  return static_cast<std::uint64_t>(v);
}

/// Precedence: --seed flag, then the config file's own key, then SMRL_SEED,
/// then the built-in default already held in `current`.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const Json& cfg,
                                  std::uint64_t current) {
  if (flag) return *flag;
  if (cfg.is_object() && cfg.contains("seed")) return current;
  if (const auto env = env_seed()) return *env;
  return current;
}

// ---------------------------------------------------------------------------
// SimConfig <-> JSON
// ---------------------------------------------------------------------------

inline CoefficientSource parse_coefficient_source(const std::string& s) {
  if (s == "fixed") return CoefficientSource::fixed;
  if (s == "resample") return CoefficientSource::resample;
  throw ConfigError("coefficients must be fixed or resample; got '" + s + "'");
}

inline const char* to_string(CoefficientSource s) {
  return s == CoefficientSource::fixed ? "fixed" : "resample";
}

inline SimConfig sim_config_from_json(const Json& j, const std::string& context) {
  require_known_keys(j, {"n", "p", "rho", "sigma2", "model", "seed", "coefficients"}, context);
  SimConfig cfg;
  using namespace detail;
  for (const auto& item : j.items()) {
    const std::string& key = item.key();
    const Json& v = item.value();
    if (key == "n") cfg.n = get_size(v, key, context);
    else if (key == "p") cfg.p = get_size(v, key, context);
    else if (key == "rho") cfg.rho = get_double(v, key, context);
    else if (key == "sigma2") cfg.sigma2 = get_double(v, key, context);
    else if (key == "model") {
      if (!v.is_number_integer()) throw ConfigError(context + ": 'model' must be an integer");
      cfg.outcome_model = v.get<int>();
    } else if (key == "seed") cfg.seed = get_u64(v, key, context);
    else if (key == "coefficients")
      cfg.coefficient_source = parse_coefficient_source(get_string(v, key, context));
  }
  cfg.validate();
  return cfg;
}

inline Json sim_config_to_json(const SimConfig& cfg) {
  Json j;
  j["n"] = cfg.n;
  j["p"] = cfg.p;
  j["rho"] = cfg.rho;
  j["sigma2"] = cfg.sigma2;
  j["model"] = cfg.outcome_model;
  j["seed"] = cfg.seed;
  j["coefficients"] = to_string(cfg.coefficient_source);
  return j;
}

// ---------------------------------------------------------------------------
// Dataset sources (simulation or CSV + schema)
// ---------------------------------------------------------------------------

inline CsvSchema schema_from_json(const Json& j, const std::string& context) {
  require_known_keys(j,
                     {"covariates", "treatment", "factual", "mu0", "mu1", "tau", "propensity",
                      "rct", "binary_outcome"},
                     context);
  CsvSchema s;
  using namespace detail;
  if (j.contains("covariates")) {
    const Json& cov = j["covariates"];
    if (!cov.is_array()) throw ConfigError(context + ": 'covariates' must be an array of names");
    for (const auto& e : cov) {
      if (!e.is_string())
        throw ConfigError(context + ": 'covariates' must be an array of names");
      s.covariates.push_back(e.get<std::string>());
    }
  }
  if (j.contains("treatment")) s.treatment = get_string(j["treatment"], "treatment", context);
  if (j.contains("factual")) s.factual = get_string(j["factual"], "factual", context);
  if (j.contains("mu0")) s.mu0 = get_string(j["mu0"], "mu0", context);
  if (j.contains("mu1")) s.mu1 = get_string(j["mu1"], "mu1", context);
  if (j.contains("tau")) s.tau = get_string(j["tau"], "tau", context);
  if (j.contains("propensity")) s.propensity = get_string(j["propensity"], "propensity", context);
  if (j.contains("rct")) s.rct = get_string(j["rct"], "rct", context);
  if (j.contains("binary_outcome"))
    s.binary_outcome = get_bool(j["binary_outcome"], "binary_outcome", context);
  s.validate();
  return s;
}

inline Json schema_to_json(const CsvSchema& s) {
  Json j;
  j["covariates"] = s.covariates;
  j["treatment"] = s.treatment;
  j["factual"] = s.factual;
  if (!s.mu0.empty()) j["mu0"] = s.mu0;
  if (!s.mu1.empty()) j["mu1"] = s.mu1;
  if (!s.tau.empty()) j["tau"] = s.tau;
  if (!s.propensity.empty()) j["propensity"] = s.propensity;
  if (!s.rct.empty()) j["rct"] = s.rct;
  j["binary_outcome"] = s.binary_outcome;
  return j;
}

/// Schema for a file following the export layout: covariates x1..xP, then z
/// and yF, plus whichever truth columns the header carries.
inline CsvSchema infer_schema(const std::string& path) {
  CsvTable table;
  try {
    table = read_csv(path);
  } catch (const std::runtime_error& ex) {
    throw DataError(ex.what());
  }
  CsvSchema s;
  for (std::size_t j = 1; table.has_column("x" + std::to_string(j)); ++j)
    s.covariates.push_back("x" + std::to_string(j));
  if (s.covariates.empty() || !table.has_column("z") || !table.has_column("yF"))
    throw DataError("load: '" + path +
                    "' does not follow the x1..xP,z,yF layout; provide a schema");
  s.treatment = "z";
  s.factual = "yF";
  if (table.has_column("mu0")) s.mu0 = "mu0";
  if (table.has_column("mu1")) s.mu1 = "mu1";
  if (table.has_column("tau")) s.tau = "tau";
  if (table.has_column("e")) s.propensity = "e";
  if (table.has_column("rct")) s.rct = "rct";
  return s;
}

struct ResolvedData {
  Dataset data;
  Json echo;  // valid "data" section reproducing this dataset
  std::size_t dropped_rows = 0;
};

/// Resolves a config's data section: either {"sim": {...}} or
/// {"path": "file.csv"[, "schema": object-or-path]}. A sim block without its
/// own seed inherits fallback_seed (the command's resolved seed).
inline ResolvedData resolve_data(const Json& j, std::uint64_t fallback_seed,
                                 const std::string& context) {
  require_known_keys(j, {"sim", "path", "schema"}, context);
  const bool has_sim = j.contains("sim");
  const bool has_path = j.contains("path");
  if (has_sim == has_path)
    throw ConfigError(context + ": provide exactly one of 'sim' or 'path'");

  ResolvedData out;
  if (has_sim) {
    SimConfig sc = sim_config_from_json(j["sim"], context + " sim");
    if (!j["sim"].contains("seed")) sc.seed = fallback_seed;
    out.data = make_dataset(sc);
    out.echo = Json{{"sim", sim_config_to_json(sc)}};
    return out;
  }
  const std::string path = detail::get_string(j["path"], "path", context);
  CsvSchema schema;
  if (j.contains("schema")) {
    const Json& sj = j["schema"];
    if (sj.is_string())
      schema = schema_from_json(detail::parse_json_file(sj.get<std::string>(), context + " schema"),
                                context + " schema");
    else
      schema = schema_from_json(sj, context + " schema");
  } else {
    schema = infer_schema(path);
  }
  LoadedDataset loaded = load_csv(path, schema);
  out.data = std::move(loaded.data);
  out.dropped_rows = loaded.dropped_rows;
  out.echo = Json{{"path", path}, {"schema", schema_to_json(schema)}};
  return out;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

inline int cmd_simulate(const CommonOptions& opt) {
  const std::string started = detail::utc_timestamp();
  const Json file = load_config_json(opt.config_path, "simulate");
  SimConfig sc = sim_config_from_json(file, "simulate config");
  sc.seed = resolve_seed(opt.seed, file, sc.seed);

  const Dataset d = make_dataset(sc);
  std::filesystem::create_directories(opt.out_dir);
  const auto out_path = [&](const char* name) {
    return (std::filesystem::path(opt.out_dir) / name).string();
  };
  export_csv(d, out_path("dataset.csv"));

  RunManifest man;
  man.command = "simulate";
  man.config = sim_config_to_json(sc);
  man.seeds.push_back(sc.seed);
  man.started = started;
  man.finished = detail::utc_timestamp();
  man.outputs = {"dataset.csv"};
  write_manifest(man, opt.out_dir);

  std::size_t treated = 0;
  for (int z : d.z) treated += static_cast<std::size_t>(z);
  std::printf("simulate: model %d, n = %zu, p = %zu, seed = %llu (%zu treated)\n",
              sc.outcome_model, d.n(), d.p(), static_cast<unsigned long long>(sc.seed), treated);
  std::printf("wrote %s and manifest.json\n", out_path("dataset.csv").c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline int cmd_train(const CommonOptions& opt) {
  const std::string started = detail::utc_timestamp();
  const Json file = load_config_json(opt.config_path, "train");
  require_known_keys(file, {"data", "train"}, "train config");
  if (!file.contains("data"))
    throw ConfigError("train config: needs a 'data' section (sim block or csv path)");

  const Json train_obj = file.contains("train") ? file["train"] : Json::object();
  TrainConfig cfg = config_from_json(train_obj, "train config");
  cfg.seed = resolve_seed(opt.seed, train_obj, cfg.seed);

  ResolvedData rd = resolve_data(file["data"], cfg.seed, "train data");
  if (rd.dropped_rows)
    std::fprintf(stderr, "train: dropped %zu rows with missing values\n", rd.dropped_rows);

  const TrainOutput out = train(rd.data, cfg);

  std::filesystem::create_directories(opt.out_dir);
  const auto out_path = [&](const char* name) {
    return (std::filesystem::path(opt.out_dir) / name).string();
  };
  save_checkpoint(out.model, out_path("checkpoint.json"));
  write_history_csv(out.history, out_path("history.csv"));

  RunManifest man;
  man.command = "train";
  man.config = Json{{"data", rd.echo}, {"train", config_to_json(cfg)}};
  man.seeds.push_back(cfg.seed);
  man.result = Json{{"stop_reason", to_string(out.history.stop_reason)},
                    {"stop_detail", out.history.stop_detail},
                    {"epochs", out.history.epochs.size()},
                    {"best_val", out.history.best_val},
                    {"best_epoch", out.history.best_epoch}};
  man.started = started;
  man.finished = detail::utc_timestamp();
  man.outputs = {"checkpoint.json", "history.csv"};
  write_manifest(man, opt.out_dir);

  std::printf("train: %s after %zu epochs (%s)\n", to_string(out.history.stop_reason),
              out.history.epochs.size(), out.history.stop_detail.c_str());
  std::printf("wrote %s, %s, and manifest.json\n", out_path("checkpoint.json").c_str(),
              out_path("history.csv").c_str());
  if (out.history.stop_reason == StopReason::nonfinite_loss) return kExitNonFinite;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

enum class EvalTask { effects, policy, classify };

inline const char* to_string(EvalTask t) {
  switch (t) {
    case EvalTask::effects: return "effects";
    case EvalTask::policy: return "policy";
    default: return "classify";
  }
}

inline EvalTask parse_eval_task(const std::string& s) {
  if (s == "effects") return EvalTask::effects;
  if (s == "policy") return EvalTask::policy;
  if (s == "classify") return EvalTask::classify;
  throw ConfigError("task must be one of auto, effects, policy, classify; got '" + s + "'");
}

namespace detail {

/// Task routing when the config says "auto": a randomized subset marker means
/// the policy metrics, a binary outcome with both recorded arms means the
/// classification metrics, stored effect truth means the effect metrics.
inline EvalTask infer_eval_task(const Dataset& d) {
  if (d.rct) return EvalTask::policy;
  if (d.binary_outcome && d.mu0 && d.mu1) return EvalTask::classify;
  if (d.tau || (d.mu0 && d.mu1)) return EvalTask::effects;
  throw ConfigError(
      "eval: cannot infer the task (no rct column, no stored outcomes or effects); set 'task'");
}

inline std::vector<int> binary_labels(const std::vector<double>& v, const char* name) {
  std::vector<int> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == 0.0) out[i] = 0;
    else if (v[i] == 1.0) out[i] = 1;
    else
      throw DataError(std::string("eval: ") + name + "[" + std::to_string(i) + "] = " +
                      format_double(v[i]) + " is not a binary outcome");
  }
  return out;
}

}  // namespace detail

inline int cmd_eval(const CommonOptions& opt) {
  const std::string started = detail::utc_timestamp();
  const Json file = load_config_json(opt.config_path, "eval");
  require_known_keys(file, {"checkpoint", "data", "task", "true_ate", "h_div", "seed"},
                     "eval config");
  if (!file.contains("checkpoint"))
    throw ConfigError("eval config: needs 'checkpoint' (path to a trained model)");
  if (!file.contains("data")) throw ConfigError("eval config: needs a 'data' section");

  const std::string ckpt_path =
      detail::get_string(file["checkpoint"], "checkpoint", "eval config");
  const TrainedModel model = load_checkpoint(ckpt_path);

  std::uint64_t seed = 0;
  if (file.contains("seed")) seed = detail::get_u64(file["seed"], "seed", "eval config");
  seed = resolve_seed(opt.seed, file, seed);

  ResolvedData rd = resolve_data(file["data"], seed, "eval data");
  if (rd.dropped_rows)
    std::fprintf(stderr, "eval: dropped %zu rows with missing values\n", rd.dropped_rows);
  const Dataset& d = rd.data;

  EvalTask task;
  if (file.contains("task")) {
    const std::string t = detail::get_string(file["task"], "task", "eval config");
    task = (t == "auto") ? detail::infer_eval_task(d) : parse_eval_task(t);
  } else {
    task = detail::infer_eval_task(d);
  }

  const IteEstimate est = predict_ite(model, d.x);

  EvalReport rep;
  rep.n_eval = d.n();
  rep.seed = seed;
  switch (task) {
    case EvalTask::effects: {
      if (d.mu0 && d.mu1) {
        rep.pehe = pehe(est.tau_hat, *d.mu1, *d.mu0);
      } else if (d.tau) {
        // pehe compares tau_hat to mu1 - mu0 rowwise; with only tau stored,
        // feed it as (tau, 0)
        const std::vector<double> zeros(d.n(), 0.0);
        rep.pehe = pehe(est.tau_hat, *d.tau, zeros);
      } else {
        throw DataError("eval: the effects task needs stored mu0/mu1 or tau columns");
      }
      rep.sqrt_pehe = std::sqrt(*rep.pehe);
      double truth;
      if (file.contains("true_ate")) {
        truth = detail::get_double(file["true_ate"], "true_ate", "eval config");
      } else {
        // tau is present for simulated data and derived at load for csv data
        // carrying mu0/mu1, so the effects task always has a sample truth
        double s = 0.0;
        if (d.tau)
          for (double t : *d.tau) s += t;
        else
          for (std::size_t i = 0; i < d.n(); ++i) s += (*d.mu1)[i] - (*d.mu0)[i];
        truth = s / static_cast<double>(d.n());
      }
      rep.ate_bias = ate_bias(est.tau_hat, truth);
      break;
    }
    case EvalTask::policy: {
      if (!d.rct) throw DataError("eval: the policy task needs an rct column");
      std::string warning;
      rep.policy_risk = policy_risk(est.mu1_hat, est.mu0_hat, d.yf, d.z, *d.rct, &warning);
      if (!warning.empty()) std::fprintf(stderr, "%s", warning.c_str());
      rep.att_bias = att_bias(est.tau_hat, d.yf, d.z, *d.rct);
      break;
    }
    case EvalTask::classify: {
      if (!(d.mu0 && d.mu1))
        throw DataError("eval: the classify task needs both recorded outcome columns (mu0, mu1)");
      const std::vector<int> y0 = detail::binary_labels(*d.mu0, "mu0");
      const std::vector<int> y1 = detail::binary_labels(*d.mu1, "mu1");
      std::vector<double> score = est.mu0_hat;
      score.insert(score.end(), est.mu1_hat.begin(), est.mu1_hat.end());
      std::vector<int> labels = y0;
      labels.insert(labels.end(), y1.begin(), y1.end());
      rep.auc = outcome_auc(score, labels);
      double s = 0.0;
      for (std::size_t i = 0; i < d.n(); ++i) s += (*d.mu1)[i] - (*d.mu0)[i];
      rep.ate_bias = ate_bias(est.tau_hat, s / static_cast<double>(d.n()));
      break;
    }
  }

  if (file.contains("h_div") && detail::get_bool(file["h_div"], "h_div", "eval config")) {
    const Matrix r = forward_rep(model.bundle, model.scaler.apply_x(d.x));
    std::vector<std::size_t> i0, i1;
    for (std::size_t i = 0; i < d.n(); ++i) (d.z[i] ? i1 : i0).push_back(i);
    ProbeConfig probe;
    probe.seed = derive_seed(seed, "eval.hdiv");
    rep.h_div = h_divergence(select_rows(r, i0), select_rows(r, i1), probe);
  }

  const TrainingDiagnostics diag = training_diagnostics(model, d);

  std::filesystem::create_directories(opt.out_dir);
  const auto out_path = [&](const char* name) {
    return (std::filesystem::path(opt.out_dir) / name).string();
  };
  const std::vector<std::string> header = {"task",   "n_eval",      "pehe",     "sqrt_pehe",
                                           "ate_bias", "policy_risk", "att_bias", "auc",
                                           "h_div",  "val_fl",      "l_disc",   "l_phi",
                                           "l_rsk",  "d_d"};
  auto opt_cell = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  const std::vector<std::vector<std::string>> rows = {
      {to_string(task), std::to_string(rep.n_eval), opt_cell(rep.pehe), opt_cell(rep.sqrt_pehe),
       opt_cell(rep.ate_bias), opt_cell(rep.policy_risk), opt_cell(rep.att_bias),
       opt_cell(rep.auc), opt_cell(rep.h_div), format_double(diag.val_fl),
       format_double(diag.l_disc), format_double(diag.l_phi), format_double(diag.l_rsk),
       format_double(diag.d_d)}};
  write_csv(out_path("eval.csv"), header, rows);

  RunManifest man;
  man.command = "eval";
  man.config = Json{{"checkpoint", ckpt_path}, {"data", rd.echo}, {"task", to_string(task)}};
  if (file.contains("true_ate")) man.config["true_ate"] = file["true_ate"];
  if (file.contains("h_div")) man.config["h_div"] = file["h_div"];
  man.config["seed"] = seed;
  man.seeds.push_back(seed);
  man.started = started;
  man.finished = detail::utc_timestamp();
  man.outputs = {"eval.csv"};
  write_manifest(man, opt.out_dir);

  std::printf("eval: task %s on %zu rows\n", to_string(task), d.n());
  for (std::size_t j = 2; j < header.size(); ++j)
    if (!rows[0][j].empty()) std::printf("  %-11s %s\n", header[j].c_str(), rows[0][j].c_str());
  std::printf("wrote %s and manifest.json\n", out_path("eval.csv").c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

inline BenchConfig bench_config_from_json(const Json& j) {
  const std::string context = "bench config";
  require_known_keys(j, {"models", "ns", "reps", "methods", "seed", "workers", "sim", "train"},
                     context);
  BenchConfig cfg;
  using namespace detail;
  if (j.contains("models")) {
    if (!j["models"].is_array()) throw ConfigError(context + ": 'models' must be an array");
    cfg.models.clear();
    for (const auto& e : j["models"]) {
      if (!e.is_number_integer()) throw ConfigError(context + ": 'models' must hold integers");
      cfg.models.push_back(e.get<int>());
    }
  }
  if (j.contains("ns")) {
    if (!j["ns"].is_array()) throw ConfigError(context + ": 'ns' must be an array");
    cfg.ns.clear();
    for (const auto& e : j["ns"]) {
      if (!e.is_number_unsigned())
        throw ConfigError(context + ": 'ns' must hold positive integers");
      cfg.ns.push_back(e.get<std::size_t>());
    }
  }
  if (j.contains("reps")) cfg.reps = get_size(j["reps"], "reps", context);
  if (j.contains("methods")) {
    if (!j["methods"].is_array()) throw ConfigError(context + ": 'methods' must be an array");
    cfg.methods.clear();
    for (const auto& e : j["methods"]) {
      if (!e.is_string()) throw ConfigError(context + ": 'methods' must hold method names");
      cfg.methods.push_back(parse_ablation(e.get<std::string>()));
    }
  }
  if (j.contains("seed")) cfg.seed = get_u64(j["seed"], "seed", context);
  if (j.contains("workers")) cfg.workers = get_size(j["workers"], "workers", context);
  if (j.contains("sim")) {
    const Json& sj = j["sim"];
    for (const char* grid_key : {"n", "model", "seed"})
      if (sj.is_object() && sj.contains(grid_key))
        throw ConfigError(context + ": sim key '" + std::string(grid_key) +
                          "' is controlled by the bench grid; set models/ns/seed instead");
    cfg.sim_base = sim_config_from_json(sj, context + " sim");
  }
  if (j.contains("train")) {
    const Json& tj = j["train"];
    for (const char* grid_key : {"ablation", "seed"})
      if (tj.is_object() && tj.contains(grid_key))
        throw ConfigError(context + ": train key '" + std::string(grid_key) +
                          "' is controlled by the bench grid; set methods/seed instead");
    cfg.train_base = config_from_json(tj, context + " train");
  }
  cfg.validate();
  return cfg;
}

inline Json bench_config_to_json(const BenchConfig& cfg) {
  Json j;
  j["models"] = cfg.models;
  j["ns"] = cfg.ns;
  j["reps"] = cfg.reps;
  Json methods = Json::array();
  for (Ablation m : cfg.methods) methods.push_back(to_string(m));
  j["methods"] = methods;
  j["seed"] = cfg.seed;
  j["workers"] = cfg.workers;
  Json sim = sim_config_to_json(cfg.sim_base);
  sim.erase("n");
  sim.erase("model");
  sim.erase("seed");
  j["sim"] = sim;
  Json train = config_to_json(cfg.train_base);
  train.erase("ablation");
  train.erase("seed");
  j["train"] = train;
  return j;
}

inline int cmd_bench(const CommonOptions& opt) {
  const std::string started = detail::utc_timestamp();
  const Json file = load_config_json(opt.config_path, "bench");
  BenchConfig cfg = bench_config_from_json(file);
  if (opt.seed) cfg.seed = *opt.seed;
  else if (!file.contains("seed")) {
    if (const auto env = env_seed()) cfg.seed = *env;
  }
  if (opt.reps) cfg.reps = *opt.reps;
  if (opt.workers) cfg.workers = *opt.workers;
  cfg.validate();

  const BenchResult res = run_bench(cfg);

  std::filesystem::create_directories(opt.out_dir);
  const auto out_path = [&](const char* name) {
    return (std::filesystem::path(opt.out_dir) / name).string();
  };

  {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(res.rows.size());
    for (const BenchRow& r : res.rows)
      rows.push_back({std::to_string(r.model), std::to_string(r.n), to_string(r.method),
                      std::to_string(r.rep), std::to_string(r.seed), r.status,
                      r.ok() ? std::to_string(r.epochs) : "", r.stop_reason,
                      format_double(r.pehe), format_double(r.sqrt_pehe),
                      format_double(r.ate_bias)});
    write_csv(out_path("results.csv"),
              {"model", "n", "method", "rep", "seed", "status", "epochs", "stop_reason", "pehe",
               "sqrt_pehe", "ate_bias"},
              rows);
  }
  {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(res.aggregates.size());
    for (const BenchAggregate& a : res.aggregates)
      rows.push_back({std::to_string(a.model), std::to_string(a.n), to_string(a.method),
                      std::to_string(a.n_ok), std::to_string(a.n_failed),
                      format_double(a.pehe_mean), format_double(a.pehe_sd),
                      format_double(a.sqrt_pehe_mean), format_double(a.sqrt_pehe_sd),
                      format_double(a.ate_mean), format_double(a.ate_sd)});
    write_csv(out_path("aggregate.csv"),
              {"model", "n", "method", "n_ok", "n_failed", "pehe_mean", "pehe_sd",
               "sqrt_pehe_mean", "sqrt_pehe_sd", "ate_mean", "ate_sd"},
              rows);
  }
  const std::string table = bench_table(res);
  {
    std::ofstream out(out_path("aggregate.txt"), std::ios::binary);
    if (!out) throw DataError("bench: cannot write aggregate.txt");
    out << table;
  }

  RunManifest man;
  man.command = "bench";
  man.config = bench_config_to_json(cfg);
  for (const SeedLedgerEntry& e : res.ledger)
    man.seeds.push_back(Json{{"model", e.model}, {"n", e.n}, {"rep", e.rep}, {"seed", e.seed}});
  std::size_t failed = 0;
  for (const BenchRow& r : res.rows) failed += r.ok() ? 0 : 1;
  man.result = Json{{"rows", res.rows.size()}, {"failed", failed}};
  man.started = started;
  man.finished = detail::utc_timestamp();
  man.outputs = {"results.csv", "aggregate.csv", "aggregate.txt"};
  write_manifest(man, opt.out_dir);

  std::fputs(table.c_str(), stdout);
  if (failed)
    std::fprintf(stderr, "bench: %zu of %zu runs failed and were excluded from aggregates\n",
                 failed, res.rows.size());
  std::printf("wrote %s, %s, %s, and manifest.json\n", out_path("results.csv").c_str(),
              out_path("aggregate.csv").c_str(), out_path("aggregate.txt").c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

namespace detail {

struct GradCheckInstance {
  Matrix x, r;
  std::vector<int> z;
  std::vector<double> y;
  ModelBundle bundle;
  LossWeights weights;
};

inline GradCheckInstance gradcheck_instance(std::uint64_t seed, std::size_t draw,
                                            const std::vector<std::size_t>& pinned) {
  Rng rng = Rng::stream(seed, "gradcheck.draw" + std::to_string(draw));
  GradCheckInstance inst;
  // rows >= 12 keeps the sample covariances full rank for every p, d drawn
  // below; rank-deficient draws make the eigenvalue loss so sharply curved
  // that central differences lose the tolerance for reasons that are not
  // gradient bugs
  const std::size_t n = pinned.empty() ? 12 + rng.integer(8) : pinned[0];
  const std::size_t p = pinned.empty() ? 2 + rng.integer(4) : pinned[1];
  const std::size_t d = pinned.empty() ? 2 + rng.integer(4) : pinned[2];
  inst.x = Matrix(n, p);
  for (double& v : inst.x.data()) v = rng.normal();
  inst.r = Matrix(n, d);
  for (double& v : inst.r.data()) v = rng.normal();
  inst.z.resize(n);
  inst.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    inst.z[i] = static_cast<int>(i % 2);  // both arms always present
    inst.y[i] = rng.normal();
  }
  const std::size_t w1 = 2 + rng.integer(3), w2 = 2 + rng.integer(3), w3 = 2 + rng.integer(3);
  inst.bundle.rep_cfg = MlpConfig::make(p, 1, w1, d, Activation::elu);
  inst.bundle.head_cfg = MlpConfig::make(d, 1, w2, 1, Activation::elu);
  inst.bundle.disc_cfg = MlpConfig::make(d, 1, w3, 1, Activation::elu);
  inst.bundle.rep = init_params(inst.bundle.rep_cfg, rng.integer(1u << 30));
  inst.bundle.head0 = init_params(inst.bundle.head_cfg, rng.integer(1u << 30));
  inst.bundle.head1 = init_params(inst.bundle.head_cfg, rng.integer(1u << 30));
  inst.bundle.disc = init_params(inst.bundle.disc_cfg, rng.integer(1u << 30));
  return inst;
}

inline double rel_gap(double analytic, double fd) {
  return std::fabs(analytic - fd) / std::max({1.0, std::fabs(analytic), std::fabs(fd)});
}

/// Central differences of `value` over a flattened parameter vector, compared
/// coordinate-by-coordinate against `analytic`. Returns the worst gap.
template <typename ValueAt>
inline double fd_worst_params(const ParamSet& at, const std::vector<double>& analytic, double h,
                              ValueAt value) {
  std::vector<double> flat = at.flatten();
  ParamSet probe = at;
  double worst = 0.0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double keep = flat[i];
    flat[i] = keep + h;
    probe.assign_flat(flat);
    const double up = value(probe);
    flat[i] = keep - h;
    probe.assign_flat(flat);
    const double down = value(probe);
    flat[i] = keep;
    worst = std::max(worst, rel_gap(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

template <typename ValueAt>
inline double fd_worst_matrix(const Matrix& at, const Matrix& analytic, double h, ValueAt value) {
  Matrix probe = at;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.rows(); ++i)
    for (std::size_t j = 0; j < probe.cols(); ++j) {
      const double keep = probe(i, j);
      probe(i, j) = keep + h;
      const double up = value(probe);
      probe(i, j) = keep - h;
      const double down = value(probe);
      probe(i, j) = keep;
      worst = std::max(worst, rel_gap(analytic(i, j), (up - down) / (2.0 * h)));
    }
  return worst;
}

}  // namespace detail

inline int cmd_gradcheck(const CommonOptions& opt) {
  const Json file = load_config_json(opt.config_path, "gradcheck");
  require_known_keys(file, {"draws", "seed", "tolerance", "fd_step", "widths", "inject_error"},
                     "gradcheck config");
  using namespace detail;
  std::size_t draws = 20;
  double tolerance = 1e-4;
  double h = 1e-5;
  std::vector<std::size_t> pinned;
  if (file.contains("draws")) draws = get_size(file["draws"], "draws", "gradcheck config");
  if (file.contains("tolerance"))
    tolerance = get_double(file["tolerance"], "tolerance", "gradcheck config");
  if (file.contains("fd_step")) h = get_double(file["fd_step"], "fd_step", "gradcheck config");
  if (file.contains("widths")) {
    const Json& w = file["widths"];
    if (!w.is_array() || w.size() != 3)
      throw ConfigError("gradcheck config: 'widths' must be [rows, input_dim, rep_dim]");
    for (const auto& e : w) {
      if (!e.is_number_unsigned())
        throw ConfigError("gradcheck config: 'widths' must hold positive integers");
      pinned.push_back(e.get<std::size_t>());
    }
    if (pinned[0] < 4 || pinned[1] < 1 || pinned[2] < 1)
      throw ConfigError("gradcheck config: widths need rows >= 4 and positive dimensions");
  }
  if (draws < 1) throw ConfigError("gradcheck config: draws must be >= 1");
  if (!(tolerance > 0.0)) throw ConfigError("gradcheck config: tolerance must be > 0");
  if (!(h > 0.0)) throw ConfigError("gradcheck config: fd_step must be > 0");

  std::string inject = opt.inject_error;
  if (file.contains("inject_error"))
    inject = get_string(file["inject_error"], "inject_error", "gradcheck config");
  const std::vector<std::string> loss_names = {"loss_disc", "loss_balance", "loss_rsk",
                                               "loss_factual"};
  if (!inject.empty() &&
      std::find(loss_names.begin(), loss_names.end(), "loss_" + inject) == loss_names.end())
    throw ConfigError("gradcheck: inject_error must be one of disc, balance, rsk, factual; got '" +
                      inject + "'");

  std::uint64_t seed = 0;
  if (file.contains("seed")) seed = get_u64(file["seed"], "seed", "gradcheck config");
  seed = resolve_seed(opt.seed, file, seed);

  double worst[4] = {0.0, 0.0, 0.0, 0.0};
  for (std::size_t draw = 0; draw < draws; ++draw) {
    GradCheckInstance inst = gradcheck_instance(seed, draw, pinned);
    std::vector<std::size_t> i0, i1;
    for (std::size_t i = 0; i < inst.z.size(); ++i) (inst.z[i] ? i1 : i0).push_back(i);
    const Matrix r0 = select_rows(inst.r, i0);
    const Matrix r1 = select_rows(inst.r, i1);
    const ModelBundle& m = inst.bundle;

    {  // discriminator loss, gradient in the discriminator parameters
      ParamSet g = ParamSet::zeros(m.disc_cfg);
      loss_disc_grad(m.disc_cfg, m.disc, r0, r1, g);
      std::vector<double> analytic = g.flatten();
      if (inject == "disc") analytic[0] += 1.0;
      worst[0] = std::max(worst[0], fd_worst_params(m.disc, analytic, h, [&](const ParamSet& p) {
                            return loss_disc(m.disc_cfg, p, r0, r1);
                          }));
    }
    {  // balancing loss, gradient in the scored representations
      Matrix d_r0;
      loss_balance_grad(m.disc_cfg, m.disc, r0, d_r0);
      if (inject == "balance") d_r0(0, 0) += 1.0;
      worst[1] = std::max(worst[1], fd_worst_matrix(r0, d_r0, h, [&](const Matrix& rr) {
                            return loss_balance(m.disc_cfg, m.disc, rr);
                          }));
    }
    {  // structure keeper, gradient in the representations
      Matrix d_r;
      loss_rsk_grad(inst.x, inst.r, inst.weights, d_r);
      if (inject == "rsk") d_r(0, 0) += 1.0;
      worst[2] = std::max(worst[2], fd_worst_matrix(inst.r, d_r, h, [&](const Matrix& rr) {
                            return loss_rsk(inst.x, rr, inst.weights).loss_value;
                          }));
    }
    {  // factual loss, gradient in representation and both head parameter sets
      ParamSet g_rep = ParamSet::zeros(m.rep_cfg);
      ParamSet g_h0 = ParamSet::zeros(m.head_cfg);
      ParamSet g_h1 = ParamSet::zeros(m.head_cfg);
      loss_factual_grad(m, inst.x, inst.z, inst.y, inst.weights, g_rep, g_h0, g_h1);
      std::vector<double> a_rep = g_rep.flatten();
      if (inject == "factual") a_rep[0] += 1.0;
      auto with_rep = [&](const ParamSet& p) {
        ModelBundle probe = m;
        probe.rep = p;
        return loss_factual(probe, inst.x, inst.z, inst.y, inst.weights);
      };
      auto with_h0 = [&](const ParamSet& p) {
        ModelBundle probe = m;
        probe.head0 = p;
        return loss_factual(probe, inst.x, inst.z, inst.y, inst.weights);
      };
      auto with_h1 = [&](const ParamSet& p) {
        ModelBundle probe = m;
        probe.head1 = p;
        return loss_factual(probe, inst.x, inst.z, inst.y, inst.weights);
      };
      double w = fd_worst_params(m.rep, a_rep, h, with_rep);
      w = std::max(w, fd_worst_params(m.head0, g_h0.flatten(), h, with_h0));
      w = std::max(w, fd_worst_params(m.head1, g_h1.flatten(), h, with_h1));
      worst[3] = std::max(worst[3], w);
    }
  }

  std::printf("gradcheck: %zu draws, h = %g, tolerance = %g, seed = %llu\n", draws, h, tolerance,
              static_cast<unsigned long long>(seed));
  std::string failures;
  for (std::size_t i = 0; i < loss_names.size(); ++i) {
    const bool ok = worst[i] <= tolerance;
    std::printf("  %-13s max relative error %.3e  %s\n", loss_names[i].c_str(), worst[i],
                ok ? "pass" : "FAIL");
    if (!ok) failures += (failures.empty() ? "" : ", ") + loss_names[i];
  }
  if (!failures.empty()) {
    std::printf("gradcheck: FAIL (%s exceeded tolerance)\n", failures.c_str());
    return kExitGradcheck;
  }
  std::printf("gradcheck: PASS\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// Runs one command, mapping library exceptions onto the documented exit
/// codes: 2 config, 3 data, 4 non-finite training, 5 gradcheck failure,
/// 1 anything unexpected.
inline int run_command(const std::string& command, const CommonOptions& opt) {
  try {
    if (command == "simulate") return cmd_simulate(opt);
    if (command == "train") return cmd_train(opt);
    if (command == "eval") return cmd_eval(opt);
    if (command == "bench") return cmd_bench(opt);
    if (command == "gradcheck") return cmd_gradcheck(opt);
    throw ConfigError("unknown command '" + command + "'");
  } catch (const ConfigError& ex) {
    std::fprintf(stderr, "config error: %s\n", ex.what());
    return kExitConfig;
  } catch (const DataError& ex) {
    std::fprintf(stderr, "data error: %s\n", ex.what());
    return kExitData;
  } catch (const NonFiniteError& ex) {
    std::fprintf(stderr, "non-finite error: %s\n", ex.what());
    return kExitNonFinite;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return kExitError;
  }
}

}  // namespace smrl
