#include <cstdint>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "smrl/commands.hpp"

namespace {

struct SubState {
  smrl::CommonOptions common;
  std::uint64_t seed = 0;
  std::size_t reps = 0;
  std::size_t workers = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* reps_opt = nullptr;
  CLI::Option* workers_opt = nullptr;
};

void add_common_flags(CLI::App* sub, SubState& st) {
  sub->add_option("-c,--config", st.common.config_path,
                  "JSON config file, or a manifest.json from an earlier run to reproduce it");
  st.seed_opt = sub->add_option("-s,--seed", st.seed,
                                "master seed; overrides the config file and SMRL_SEED");
  sub->add_option("-o,--out", st.common.out_dir, "directory for output files")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"treatment effect estimation with balanced representations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "smrl 0.1.0");

  std::map<std::string, SubState> states;

  {
    SubState& st = states["simulate"];
    CLI::App* sub =
        app.add_subcommand("simulate", "draw a synthetic cohort and write dataset.csv");
    add_common_flags(sub, st);
  }
  {
    SubState& st = states["train"];
    CLI::App* sub = app.add_subcommand(
        "train", "fit the two-headed effect model; writes checkpoint.json and history.csv");
    add_common_flags(sub, st);
  }
  {
    SubState& st = states["eval"];
    CLI::App* sub =
        app.add_subcommand("eval", "score a checkpoint against a dataset; writes eval.csv");
    add_common_flags(sub, st);
  }
  {
    SubState& st = states["bench"];
    CLI::App* sub = app.add_subcommand(
        "bench", "run the method grid over simulated cohorts; writes result tables");
    add_common_flags(sub, st);
    st.reps_opt = sub->add_option("--reps", st.reps, "replications per benchmark cell");
    st.workers_opt =
        sub->add_option("--workers", st.workers, "worker threads (0 means one per core)");
  }
  {
    SubState& st = states["gradcheck"];
    CLI::App* sub = app.add_subcommand(
        "gradcheck", "compare analytic loss gradients against central differences");
    add_common_flags(sub, st);
    sub->add_option("--inject-error", st.common.inject_error,
                    "perturb one analytic gradient (disc, balance, rsk, factual); the check "
                    "must then fail")
        ->check(CLI::IsMember({"disc", "balance", "rsk", "factual"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : smrl::kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  SubState& st = states[sub->get_name()];
  if (st.seed_opt != nullptr && st.seed_opt->count() > 0) st.common.seed = st.seed;
  if (st.reps_opt != nullptr && st.reps_opt->count() > 0) st.common.reps = st.reps;
  if (st.workers_opt != nullptr && st.workers_opt->count() > 0) st.common.workers = st.workers;
  return smrl::run_command(sub->get_name(), st.common);
}
