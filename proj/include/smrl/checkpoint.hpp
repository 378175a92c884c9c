#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "smrl/csv.hpp"
#include "smrl/errors.hpp"
#include "smrl/trainer.hpp"

namespace smrl {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Enum parsing (inverse of the to_string helpers)
// ---------------------------------------------------------------------------

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "elu") return Activation::elu;
  if (s == "identity") return Activation::identity;
  throw ConfigError("activation must be one of relu, elu, identity; got '" + s + "'");
}

inline OutputActivation parse_output_activation(const std::string& s) {
  if (s == "identity") return OutputActivation::identity;
  if (s == "tanh") return OutputActivation::tanh;
  throw ConfigError("output activation must be identity or tanh; got '" + s + "'");
}

inline InitScheme parse_init_scheme(const std::string& s) {
  if (s == "scaled") return InitScheme::scaled;
  if (s == "unit_normal") return InitScheme::unit_normal;
  throw ConfigError("init must be scaled or unit_normal; got '" + s + "'");
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("optimizer must be adam or sgd; got '" + s + "'");
}

// ---------------------------------------------------------------------------
// Strict key checking for config objects
// ---------------------------------------------------------------------------

namespace detail {

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::string nearest_key(const std::string& key, const std::vector<std::string>& valid) {
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const auto& v : valid) {
    const std::size_t d = edit_distance(key, v);
    if (d < best_d) {
      best_d = d;
      best = v;
    }
  }
  return best;
}

}  // namespace detail

/// Rejects unknown keys, reporting every offender (not just the first) along
/// with its nearest valid key.
inline void require_known_keys(const Json& obj, const std::vector<std::string>& valid,
                               const std::string& context) {
  if (!obj.is_object()) throw ConfigError(context + ": expected a JSON object");
  std::string bad;
  for (const auto& item : obj.items()) {
    if (std::find(valid.begin(), valid.end(), item.key()) != valid.end()) continue;
    if (!bad.empty()) bad += "; ";
    bad += "unknown key '" + item.key() + "' (nearest valid: '" +
           detail::nearest_key(item.key(), valid) + "')";
  }
  if (!bad.empty()) throw ConfigError(context + ": " + bad);
}

namespace detail {

inline const Json& require_field(const Json& obj, const std::string& key,
                                 const std::string& context) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(context + ": missing required key '" + key + "'");
  return *it;
}

inline double get_double(const Json& v, const std::string& key, const std::string& context) {
  if (!v.is_number()) throw ConfigError(context + ": '" + key + "' must be a number");
  return v.get<double>();
}

// Signed storage of a non-negative value is accepted: parsed text always
// arrives unsigned, but programmatically built documents carry plain ints.
inline std::size_t get_size(const Json& v, const std::string& key, const std::string& context) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ConfigError(context + ": '" + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

inline std::uint64_t get_u64(const Json& v, const std::string& key, const std::string& context) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ConfigError(context + ": '" + key + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

inline bool get_bool(const Json& v, const std::string& key, const std::string& context) {
  if (!v.is_boolean()) throw ConfigError(context + ": '" + key + "' must be true or false");
  return v.get<bool>();
}

inline std::string get_string(const Json& v, const std::string& key, const std::string& context) {
  if (!v.is_string()) throw ConfigError(context + ": '" + key + "' must be a string");
  return v.get<std::string>();
}

inline std::vector<double> get_doubles(const Json& v, const std::string& key,
                                       const std::string& context) {
  if (!v.is_array()) throw ConfigError(context + ": '" + key + "' must be an array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError(context + ": '" + key + "' must be an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// TrainConfig <-> JSON
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys = {
      "rep_layers", "rep_width",  "head_layers",  "head_width", "disc_layers",
      "disc_width", "activation", "rep_output",   "init",       "batch_size",
      "max_epochs", "eta",        "optimizer",    "alpha",      "beta",
      "lambda_reg", "lambda1",    "lambda2",      "k",          "ablation",
      "seed",       "val_fraction", "patience",   "min_delta",  "symmetric_balance",
      "standardize"};
  return keys;
}

/// Full resolved echo: every field explicit, eta resolved to its numeric value.
inline Json config_to_json(const TrainConfig& cfg) {
  Json j;
  j["rep_layers"] = cfg.rep_layers;
  j["rep_width"] = cfg.rep_width;
  j["head_layers"] = cfg.head_layers;
  j["head_width"] = cfg.head_width;
  j["disc_layers"] = cfg.disc_layers;
  j["disc_width"] = cfg.disc_width;
  j["activation"] = to_string(cfg.activation);
  j["rep_output"] = to_string(cfg.rep_output);
  j["init"] = to_string(cfg.init);
  j["batch_size"] = cfg.batch_size;
  j["max_epochs"] = cfg.max_epochs;
  j["eta"] = cfg.resolved_eta();
  j["optimizer"] = to_string(cfg.optimizer);
  j["alpha"] = cfg.weights.alpha;
  j["beta"] = cfg.weights.beta;
  j["lambda_reg"] = cfg.weights.lambda_reg;
  j["lambda1"] = cfg.weights.lambda1;
  j["lambda2"] = cfg.weights.lambda2;
  j["k"] = cfg.weights.k;
  j["ablation"] = to_string(cfg.ablation);
  j["seed"] = cfg.seed;
  j["val_fraction"] = cfg.val_fraction;
  j["patience"] = cfg.patience;
  j["min_delta"] = cfg.min_delta;
  j["symmetric_balance"] = cfg.symmetric_balance;
  j["standardize"] = cfg.standardize;
  return j;
}

/// Partial configs are fine: absent keys keep their defaults. Unknown keys are
/// all reported at once; the parsed config is validated before returning.
inline TrainConfig config_from_json(const Json& j, const std::string& context) {
  require_known_keys(j, train_config_keys(), context);
  TrainConfig cfg;
  using namespace detail;
  for (const auto& item : j.items()) {
    const std::string& key = item.key();
    const Json& v = item.value();
    if (key == "rep_layers") cfg.rep_layers = get_size(v, key, context);
    else if (key == "rep_width") cfg.rep_width = get_size(v, key, context);
    else if (key == "head_layers") cfg.head_layers = get_size(v, key, context);
    else if (key == "head_width") cfg.head_width = get_size(v, key, context);
    else if (key == "disc_layers") cfg.disc_layers = get_size(v, key, context);
    else if (key == "disc_width") cfg.disc_width = get_size(v, key, context);
    else if (key == "activation") cfg.activation = parse_activation(get_string(v, key, context));
    else if (key == "rep_output")
      cfg.rep_output = parse_output_activation(get_string(v, key, context));
    else if (key == "init") cfg.init = parse_init_scheme(get_string(v, key, context));
    else if (key == "batch_size") cfg.batch_size = get_size(v, key, context);
    else if (key == "max_epochs") cfg.max_epochs = get_size(v, key, context);
    else if (key == "eta") cfg.eta = get_double(v, key, context);
    else if (key == "optimizer") cfg.optimizer = parse_optimizer(get_string(v, key, context));
    else if (key == "alpha") cfg.weights.alpha = get_double(v, key, context);
    else if (key == "beta") cfg.weights.beta = get_double(v, key, context);
    else if (key == "lambda_reg") cfg.weights.lambda_reg = get_double(v, key, context);
    else if (key == "lambda1") cfg.weights.lambda1 = get_double(v, key, context);
    else if (key == "lambda2") cfg.weights.lambda2 = get_double(v, key, context);
    else if (key == "k") cfg.weights.k = get_size(v, key, context);
    else if (key == "ablation") cfg.ablation = parse_ablation(get_string(v, key, context));
    else if (key == "seed") cfg.seed = get_u64(v, key, context);
    else if (key == "val_fraction") cfg.val_fraction = get_double(v, key, context);
    else if (key == "patience") cfg.patience = get_size(v, key, context);
    else if (key == "min_delta") cfg.min_delta = get_double(v, key, context);
    else if (key == "symmetric_balance") cfg.symmetric_balance = get_bool(v, key, context);
    else if (key == "standardize") cfg.standardize = get_bool(v, key, context);
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Checkpoint (model + scaler + config echo)
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "smrl-checkpoint";

namespace detail {

inline Json net_to_json(const MlpConfig& cfg, const ParamSet& p) {
  Json j;
  j["widths"] = cfg.widths;
  j["hidden"] = to_string(cfg.hidden);
  j["output"] = to_string(cfg.output);
  j["params"] = p.flatten();
  return j;
}

inline void net_from_json(const Json& j, const std::string& name, MlpConfig& cfg, ParamSet& p) {
  const std::string context = "checkpoint net '" + name + "'";
  require_known_keys(j, {"widths", "hidden", "output", "params"}, context);
  const Json& w = require_field(j, "widths", context);
  if (!w.is_array() || w.size() < 2)
    throw DataError(context + ": widths must be an array of at least two layer sizes");
  cfg.widths.clear();
  for (const auto& e : w) {
    if (!e.is_number_unsigned() || e.get<std::uint64_t>() == 0)
      throw DataError(context + ": widths must be positive integers");
    cfg.widths.push_back(e.get<std::size_t>());
  }
  cfg.hidden = parse_activation(get_string(require_field(j, "hidden", context), "hidden", context));
  cfg.output =
      parse_output_activation(get_string(require_field(j, "output", context), "output", context));
  p = ParamSet::zeros(cfg);
  const std::vector<double> flat =
      get_doubles(require_field(j, "params", context), "params", context);
  if (flat.size() != p.count())
    throw DataError(context + ": expected " + std::to_string(p.count()) + " parameters, got " +
                    std::to_string(flat.size()));
  p.assign_flat(flat);
}

}  // namespace detail

inline Json checkpoint_to_json(const TrainedModel& m) {
  if (!m.bundle.all_finite())
    throw NonFiniteError("checkpoint: refusing to save non-finite parameters");
  Json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = config_to_json(m.config);
  Json scaler;
  scaler["x_mean"] = m.scaler.x_mean;
  scaler["x_sd"] = m.scaler.x_sd;
  scaler["y_mean"] = m.scaler.y_mean;
  scaler["y_sd"] = m.scaler.y_sd;
  j["scaler"] = scaler;
  Json nets;
  nets["rep"] = detail::net_to_json(m.bundle.rep_cfg, m.bundle.rep);
  nets["head0"] = detail::net_to_json(m.bundle.head_cfg, m.bundle.head0);
  nets["head1"] = detail::net_to_json(m.bundle.head_cfg, m.bundle.head1);
  nets["disc"] = detail::net_to_json(m.bundle.disc_cfg, m.bundle.disc);
  j["nets"] = nets;
  return j;
}

/// Serialized form. nlohmann emits shortest-round-trip decimals, so dumping
/// and reparsing reproduces every double bit-exactly (asserted in tests).
inline std::string checkpoint_string(const TrainedModel& m) {
  return checkpoint_to_json(m).dump(2) + "\n";
}

inline void save_checkpoint(const TrainedModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write '" + path + "'");
  out << checkpoint_string(m);
  if (!out) throw DataError("checkpoint: write failed for '" + path + "'");
}

namespace detail {

inline TrainedModel parse_checkpoint_impl(const Json& j) {
  const std::string context = "checkpoint";
  require_known_keys(j, {"format", "version", "config", "scaler", "nets"}, context);
  const std::string fmt = get_string(require_field(j, "format", context), "format", context);
  if (fmt != kCheckpointFormat)
    throw DataError("checkpoint: format is '" + fmt + "', expected '" + kCheckpointFormat + "'");
  const std::uint64_t version =
      get_u64(require_field(j, "version", context), "version", context);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: version " + std::to_string(version) + " is not supported (" +
                    "this build reads version " + std::to_string(kCheckpointVersion) + ")");

  TrainedModel m;
  m.config = config_from_json(require_field(j, "config", context), "checkpoint config");

  const Json& sc = require_field(j, "scaler", context);
  require_known_keys(sc, {"x_mean", "x_sd", "y_mean", "y_sd"}, "checkpoint scaler");
  m.scaler.x_mean = get_doubles(require_field(sc, "x_mean", context), "x_mean", context);
  m.scaler.x_sd = get_doubles(require_field(sc, "x_sd", context), "x_sd", context);
  m.scaler.y_mean = get_double(require_field(sc, "y_mean", context), "y_mean", context);
  m.scaler.y_sd = get_double(require_field(sc, "y_sd", context), "y_sd", context);
  if (m.scaler.x_mean.size() != m.scaler.x_sd.size())
    throw DataError("checkpoint: scaler x_mean and x_sd lengths differ");

  const Json& nets = require_field(j, "nets", context);
  require_known_keys(nets, {"rep", "head0", "head1", "disc"}, "checkpoint nets");
  net_from_json(require_field(nets, "rep", context), "rep", m.bundle.rep_cfg, m.bundle.rep);
  MlpConfig h0_cfg, h1_cfg;
  net_from_json(require_field(nets, "head0", context), "head0", h0_cfg, m.bundle.head0);
  net_from_json(require_field(nets, "head1", context), "head1", h1_cfg, m.bundle.head1);
  if (h0_cfg.widths != h1_cfg.widths)
    throw DataError("checkpoint: head0 and head1 have different shapes");
  m.bundle.head_cfg = h0_cfg;
  net_from_json(require_field(nets, "disc", context), "disc", m.bundle.disc_cfg, m.bundle.disc);
  try {
    m.bundle.validate();
  } catch (const std::invalid_argument& ex) {
    throw DataError(std::string("checkpoint: ") + ex.what());
  }
  if (m.bundle.rep_cfg.input_width() != m.scaler.x_mean.size())
    throw DataError("checkpoint: scaler covers " + std::to_string(m.scaler.x_mean.size()) +
                    " columns, representation expects " +
                    std::to_string(m.bundle.rep_cfg.input_width()));
  return m;
}

}  // namespace detail

/// Structural problems in a checkpoint document are data errors, but the
/// shared extractors report in config terms; convert at this boundary.
inline TrainedModel parse_checkpoint(const Json& j) {
  try {
    return detail::parse_checkpoint_impl(j);
  } catch (const ConfigError& ex) {
    throw DataError(ex.what());
  }
}

inline TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& ex) {
    throw DataError("checkpoint: '" + path + "' is not valid JSON: " + ex.what());
  }
  return parse_checkpoint(j);
}

// ---------------------------------------------------------------------------
// Training history CSV
// ---------------------------------------------------------------------------

/// One row per completed epoch; metrics a mode never computed stay empty.
inline void write_history_csv(const TrainHistory& h, const std::string& path) {
  const std::vector<std::string> header = {"epoch",  "train_fl", "val_fl", "l_disc",
                                           "l_phi",  "l_rsk",    "d_d"};
  std::vector<std::vector<std::string>> rows;
  rows.reserve(h.epochs.size());
  for (const EpochRecord& r : h.epochs)
    rows.push_back({std::to_string(r.epoch), format_double(r.train_fl), format_double(r.val_fl),
                    format_double(r.l_disc), format_double(r.l_phi), format_double(r.l_rsk),
                    format_double(r.d_d)});
  write_csv(path, header, rows);
}

}  // namespace smrl
