#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "evac/environment.hpp"
#include "evac/network.hpp"
#include "evac/reward.hpp"
#include "evac/trainer.hpp"

namespace evac::harness {

enum class PolicyKind { rainbow, nearest_exit, multi_factor, uniform_random };

std::string_view to_string(PolicyKind k);
PolicyKind parse_policy(std::string_view s);

struct PolicyHandle {
  PolicyKind kind = PolicyKind::nearest_exit;
  std::filesystem::path checkpoint;  // rainbow only
  std::shared_ptr<const nn::RainbowNetwork<float>> network;
  double lambda_w = 2.0;  // multi_factor width weight
  double lambda_d = 1.0;  // multi_factor crowding weight

  static PolicyHandle baseline(PolicyKind kind);
  static PolicyHandle rainbow(const std::filesystem::path& checkpoint);
  static PolicyHandle rainbow(std::shared_ptr<const nn::RainbowNetwork<float>> net);
  std::string label() const;
};

/// Loads a policy network from either a bare network checkpoint or a full
/// training checkpoint (online weights).
nn::RainbowNetwork<float> load_policy_network(const std::filesystem::path& path);

/// Exit utilization: min(N_l/w_l, N_b/w_b) / max(...); 0 if exactly one count
/// is zero, 1 if both are.
double r_util(int n_l, int n_b, double w_l, double w_b);

/// Action whose direction best aligns with `target - from`; ties to the lower index.
int direction_action(Vec2 from, Vec2 target);

/// Exit chosen by a baseline, or -1 when the scenario has no exits.
int baseline_exit(const PolicyHandle& policy, const orca::PedestrianState& ped,
                  const env::SimulationState& state, const env::RoomScenario& scenario);

/// Stand-in heuristic action. uniform_random draws from `rng`.
int baseline_action(const PolicyHandle& policy, const orca::PedestrianState& ped,
                    const env::SimulationState& state, const env::RoomScenario& scenario,
                    std::mt19937_64* rng = nullptr);

/// Positions and activity of every pedestrian at one frame.
struct FrameRecord {
  int frame = 0;
  std::vector<Vec2> positions;
  std::vector<char> active;
};

struct EvalReport {
  std::string scenario;  // descriptor
  env::ScenarioFamily family = env::ScenarioFamily::width_ratio;
  std::uint64_t seed = 0;
  std::string policy;
  int total_frames = 0;
  int n_l = 0;
  int n_b = 0;
  double w_l = 0.0;
  double w_b = 0.0;
  double r_util = 0.0;
  std::vector<FrameRecord> trace;  // frames 0..total_frames
  std::vector<std::vector<env::PedestrianEvent>> events;  // per step
};

std::string scenario_descriptor(env::ScenarioFamily family, const env::ScenarioParams& params);

/// One episode under `policy`. `policy_seed` drives uniform_random only.
EvalReport run_episode(const PolicyHandle& policy, const env::RoomScenario& scenario,
                       std::uint64_t policy_seed, bool keep_trace = true);

/// Runs seeds first_seed .. first_seed + n_seeds - 1, in parallel across seeds.
std::vector<EvalReport> evaluate(const PolicyHandle& policy, env::ScenarioFamily family,
                                 const env::ScenarioParams& params, int n_seeds,
                                 std::uint64_t first_seed = 0, bool keep_trace = true);

struct EvalSummary {
  int runs = 0;
  double mean_total_frames = 0.0;
  double mean_n_l = 0.0;
  double mean_n_b = 0.0;
  double mean_r_util = 0.0;
};

EvalSummary summarize(std::span<const EvalReport> reports);

inline constexpr std::string_view kMetricsHeader = "scenario,seed,policy,total_frames,N_l,N_b,r_util,w_l,w_b";
std::string metrics_row(const EvalReport& r);
void write_metrics_csv(std::span<const EvalReport> reports, const std::filesystem::path& path);

/// Evaluation output tree: metrics.csv, summary.json, run.json, traces/.
void write_eval_run(std::span<const EvalReport> reports, const PolicyHandle& policy,
                    env::ScenarioFamily family, const env::ScenarioParams& params,
                    const std::filesystem::path& dir);

/// Frames 0, k, 2k, ... up to total_frames (inclusive).
std::vector<int> render_frames(int total_frames, int interval);

/// Renders overview PGMs from a stored run directory into dir/frames and
/// writes dir/render_summary.csv. interval <= 0 picks 15 for delayed_open
/// and 10 otherwise. Returns the written files.
std::vector<std::filesystem::path> render_run(const std::filesystem::path& dir, int interval = 0);

// ---------------------------------------------------------------- training

struct RunConfig {
  train::TrainConfig train;
  env::ScenarioFamily family = env::ScenarioFamily::width_ratio;
  env::ScenarioParams params;
  bool mixed_scenarios = false;           // sample the family per episode
  std::vector<env::Ratio> width_ratios;   // optional per-episode choices for width_ratio
  reward::RewardWeights reward;
  long log_interval = 1000;               // frames per train_log row
  long checkpoint_interval = 50000;       // frames per checkpoint
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

inline constexpr std::string_view kTrainLogHeader =
    "env_frame,update_index,mean_loss,mean_q,buffer_size,episodes_done,mean_episode_frames";

struct TrainSummary {
  long env_frames = 0;
  long updates = 0;
  long syncs = 0;
  long episodes = 0;
  std::size_t buffer_size = 0;
  std::filesystem::path final_checkpoint;
};

struct TrainOptions {
  bool resume = false;        // continue from out/checkpoints/latest.bin if present
  long stop_after = -1;       // stop at this env frame without finishing (testing resume)
  std::ostream* progress = nullptr;
};

/// Full training loop. Writes out/train_log.csv, out/config.json,
/// out/checkpoints/{latest.bin,frame_<n>.bin} and out/policy.bin.
TrainSummary train(const RunConfig& cfg, const std::filesystem::path& out, const TrainOptions& opts = {});

}  // namespace evac::harness
