// Command-line front end: train, eval, render, baseline.
#include <cstdlib>
#include <iostream>
#include <string>

#include <omp.h>

#include <CLI11.hpp>

#include "evac/harness.hpp"
#include "evac/scenario_io.hpp"

namespace fs = std::filesystem;
using namespace evac;

namespace {

void apply_thread_env() {
  if (const char* t = std::getenv("EVAC_THREADS")) {
    const int n = std::atoi(t);
    if (n > 0) omp_set_num_threads(n);
  }
}

struct EvalArgs {
  std::string scenario = "width_ratio";
  std::string params;
  int seeds = 10;
  std::uint64_t seed = 0;
  fs::path out;
  bool no_trace = false;
};

void add_eval_options(CLI::App* cmd, EvalArgs& a) {
  cmd->add_option("--scenario", a.scenario, "width_ratio | distribution_ratio | delayed_open")->capture_default_str();
  cmd->add_option("--params", a.params, "scenario overrides k=v,k=v");
  cmd->add_option("--seeds", a.seeds, "number of evaluation seeds")->capture_default_str();
  cmd->add_option("--seed", a.seed, "first scenario seed")->capture_default_str();
  cmd->add_option("--out", a.out, "output directory")->required();
  cmd->add_flag("--no-trace", a.no_trace, "skip per-frame traces");
}

int run_eval(const harness::PolicyHandle& policy, const EvalArgs& a) {
  const auto family = env::parse_family(a.scenario);
  env::ScenarioParams params;
  if (!a.params.empty()) env::apply_overrides(params, a.params);
  const auto reports = harness::evaluate(policy, family, params, a.seeds, a.seed, !a.no_trace);
  harness::write_eval_run(reports, policy, family, params, a.out);
  const auto s = harness::summarize(reports);
  std::cout << policy.label() << " " << harness::scenario_descriptor(family, params) << ": runs " << s.runs
            << " mean_total_frames " << s.mean_total_frames << " mean_N_l " << s.mean_n_l << " mean_N_b "
            << s.mean_n_b << " mean_r_util " << s.mean_r_util << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_env();
  CLI::App app{"Multi-exit evacuation simulator with a Rainbow DQN policy"};
  app.require_subcommand(1);

  fs::path config_path;
  fs::path train_out;
  std::uint64_t train_seed = 0;
  bool resume = false;
  long stop_after = -1;
  auto* train_cmd = app.add_subcommand("train", "train a policy network");
  train_cmd->add_option("--config", config_path, "JSON run configuration")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  auto* seed_opt = train_cmd->add_option("--seed", train_seed, "64-bit seed (overrides the config)");
  train_cmd->add_flag("--resume", resume, "continue from out/checkpoints/latest.bin");
  train_cmd->add_option("--stop-after", stop_after, "stop early at this environment frame");

  fs::path checkpoint;
  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "policy or training checkpoint")->required();
  add_eval_options(eval_cmd, eval_args);

  fs::path run_dir;
  int interval = 0;
  auto* render_cmd = app.add_subcommand("render", "dump overview frames of an evaluation run");
  render_cmd->add_option("--run", run_dir, "evaluation output directory")->required();
  render_cmd->add_option("--interval", interval, "frame interval (default 10, 15 for delayed_open)");

  std::string kind;
  EvalArgs base_args;
  auto* base_cmd = app.add_subcommand("baseline", "evaluate a stand-in heuristic policy");
  base_cmd->add_option("--kind", kind, "nearest_exit | multi_factor | uniform_random")->required();
  add_eval_options(base_cmd, base_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      auto cfg = harness::load_run_config(config_path);
      if (*seed_opt) cfg.train.seed = train_seed;
      harness::TrainOptions opts;
      opts.resume = resume;
      opts.stop_after = stop_after;
      opts.progress = &std::cout;
      const auto s = harness::train(cfg, train_out, opts);
      std::cout << "frames " << s.env_frames << " updates " << s.updates << " syncs " << s.syncs << " episodes "
                << s.episodes << "\n";
      if (!s.final_checkpoint.empty()) std::cout << "policy " << s.final_checkpoint.string() << "\n";
    } else if (*eval_cmd) {
      return run_eval(harness::PolicyHandle::rainbow(checkpoint), eval_args);
    } else if (*render_cmd) {
      const auto files = harness::render_run(run_dir, interval);
      std::cout << "wrote " << files.size() << " frames\n";
    } else if (*base_cmd) {
      return run_eval(harness::PolicyHandle::baseline(harness::parse_policy(kind)), base_args);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
