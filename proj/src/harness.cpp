#include "evac/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "evac/raster.hpp"
#include "evac/replay.hpp"
#include "evac/scenario_io.hpp"

namespace evac::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v, const char* spec = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

nn::Rng make_stream(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  return nn::Rng(seq);
}

std::string rng_state(const nn::Rng& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

void restore_rng(nn::Rng& rng, const std::string& state) {
  std::istringstream s(state);
  s >> rng;
  if (!s) throw std::runtime_error("corrupt rng state in checkpoint");
}

std::vector<Vec2> open_exit_centers(const env::RoomScenario& sc, int frame) {
  std::vector<Vec2> out;
  for (const auto& e : sc.exits) {
    if (e.is_open(frame)) out.push_back(e.center);
  }
  return out;
}

std::vector<int> active_ids(const env::SimulationState& s) {
  std::vector<int> ids;
  for (const auto& p : s.pedestrians) {
    if (p.active) ids.push_back(p.id);
  }
  return ids;
}

std::vector<int> greedy_for(const nn::BatchOutput<float>& out, const nn::NetworkShape& shape) {
  return train::greedy_actions(out, shape);
}

}  // namespace

// ---------------------------------------------------------------- policies

std::string_view to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::rainbow: return "rainbow";
    case PolicyKind::nearest_exit: return "nearest_exit";
    case PolicyKind::multi_factor: return "multi_factor";
    case PolicyKind::uniform_random: return "uniform_random";
  }
  return "unknown";
}

PolicyKind parse_policy(std::string_view s) {
  for (auto k : {PolicyKind::rainbow, PolicyKind::nearest_exit, PolicyKind::multi_factor,
                 PolicyKind::uniform_random}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown policy kind: " + std::string(s));
}

PolicyHandle PolicyHandle::baseline(PolicyKind kind) {
  if (kind == PolicyKind::rainbow) throw std::invalid_argument("rainbow policy needs a checkpoint");
  PolicyHandle h;
  h.kind = kind;
  return h;
}

PolicyHandle PolicyHandle::rainbow(const fs::path& checkpoint) {
  PolicyHandle h;
  h.kind = PolicyKind::rainbow;
  h.checkpoint = checkpoint;
  h.network = std::make_shared<const nn::RainbowNetwork<float>>(load_policy_network(checkpoint));
  return h;
}

PolicyHandle PolicyHandle::rainbow(std::shared_ptr<const nn::RainbowNetwork<float>> net) {
  if (!net) throw std::invalid_argument("rainbow policy needs a network");
  PolicyHandle h;
  h.kind = PolicyKind::rainbow;
  h.network = std::move(net);
  return h;
}

std::string PolicyHandle::label() const { return std::string(to_string(kind)); }

nn::RainbowNetwork<float> load_policy_network(const fs::path& path) {
  const nn::Checkpoint ckpt = nn::read_checkpoint(path);
  if (!ckpt.metadata.contains("shape")) throw std::runtime_error("checkpoint has no network shape");
  nn::RainbowNetwork<float> net(nn::shape_from_json(ckpt.metadata.at("shape")), 0);
  const bool full = ckpt.find("online." + net.params().name(0)) != nullptr;
  nn::load_entries(ckpt, net.params(), full ? "online." : "");
  return net;
}

double r_util(int n_l, int n_b, double w_l, double w_b) {
  if (!(w_l > 0.0 && w_b > 0.0)) throw std::invalid_argument("exit widths must be positive");
  if (n_l == 0 && n_b == 0) return 1.0;
  if (n_l == 0 || n_b == 0) return 0.0;
  const double fl = n_l / w_l;
  const double fb = n_b / w_b;
  return std::min(fl, fb) / std::max(fl, fb);
}

int direction_action(Vec2 from, Vec2 target) {
  const Vec2 d = target - from;
  if (abs_sq(d) == 0.0) return 0;
  const Vec2 u = normalize(d);
  int best = 0;
  double best_dot = dot(env::action_direction(0), u);
  for (int k = 1; k < env::kNumActions; ++k) {
    const double v = dot(env::action_direction(k), u);
    if (v > best_dot) {
      best_dot = v;
      best = k;
    }
  }
  return best;
}

int baseline_exit(const PolicyHandle& policy, const orca::PedestrianState& ped,
                  const env::SimulationState& state, const env::RoomScenario& sc) {
  std::vector<int> candidates;
  for (std::size_t j = 0; j < sc.exits.size(); ++j) {
    if (sc.exits[j].is_open(state.frame)) candidates.push_back(static_cast<int>(j));
  }
  if (candidates.empty()) {
    for (std::size_t j = 0; j < sc.exits.size(); ++j) candidates.push_back(static_cast<int>(j));
  }
  int best = -1;
  double best_score = 0.0;
  for (int j : candidates) {
    const auto& e = sc.exits[static_cast<std::size_t>(j)];
    const double d = distance(ped.position, e.center);
    double score = d;
    if (policy.kind == PolicyKind::multi_factor) {
      int nearer = 0;
      for (const auto& o : state.pedestrians) {
        if (o.active && o.id != ped.id && distance(o.position, e.center) < d) ++nearer;
      }
      score = d - policy.lambda_w * e.width + policy.lambda_d * nearer;
    }
    if (best < 0 || score < best_score) {
      best = j;
      best_score = score;
    }
  }
  return best;
}

int baseline_action(const PolicyHandle& policy, const orca::PedestrianState& ped,
                    const env::SimulationState& state, const env::RoomScenario& sc,
                    std::mt19937_64* rng) {
  switch (policy.kind) {
    case PolicyKind::uniform_random: {
      if (!rng) throw std::invalid_argument("uniform_random needs an rng");
      std::uniform_int_distribution<int> pick(0, env::kNumActions - 1);
      return pick(*rng);
    }
    case PolicyKind::nearest_exit:
    case PolicyKind::multi_factor: {
      const int e = baseline_exit(policy, ped, state, sc);
      return e < 0 ? 0 : direction_action(ped.position, sc.exits[static_cast<std::size_t>(e)].center);
    }
    case PolicyKind::rainbow: break;
  }
  throw std::invalid_argument("baseline_action called with a rainbow policy");
}

// ---------------------------------------------------------------- evaluation

std::string scenario_descriptor(env::ScenarioFamily family, const env::ScenarioParams& p) {
  std::string s(env::to_string(family));
  s += " side=" + fmt(p.side_length, "%g") + " n=" + std::to_string(p.pedestrian_count);
  s += " p_ew=" + p.width_ratio.str() + " p_pd=" + p.distribution_ratio.str();
  if (family == env::ScenarioFamily::delayed_open) s += " open_l=" + std::to_string(p.exit_l_open_frame);
  return s;
}

namespace {

FrameRecord snapshot(const env::SimulationState& s) {
  FrameRecord r;
  r.frame = s.frame;
  for (const auto& p : s.pedestrians) {
    r.positions.push_back(p.position);
    r.active.push_back(p.active ? 1 : 0);
  }
  return r;
}

}  // namespace

EvalReport run_episode(const PolicyHandle& policy, const env::RoomScenario& sc,
                       std::uint64_t policy_seed, bool keep_trace) {
  const env::Environment environment(sc);
  env::SimulationState state = environment.reset();
  std::mt19937_64 rng(policy_seed);

  std::optional<raster::Rasterizer> rasterizer;
  std::vector<raster::StateTensor> tensors;
  if (policy.kind == PolicyKind::rainbow) {
    if (!policy.network) throw std::invalid_argument("rainbow policy has no network loaded");
    rasterizer.emplace(sc);
    for (const auto& p : state.pedestrians) {
      tensors.push_back(raster::StateTensor::fresh(
          std::make_shared<const raster::Raster>(rasterizer->rasterize(state, p.id))));
    }
  }

  EvalReport rep;
  rep.family = sc.family;
  rep.scenario = scenario_descriptor(sc.family, sc.params);
  rep.seed = sc.seed;
  rep.policy = policy.label();
  if (keep_trace) rep.trace.push_back(snapshot(state));

  std::vector<int> joint(state.pedestrians.size(), 0);
  while (!state.all_evacuated() && state.frame < sc.horizon()) {
    const auto ids = active_ids(state);
    if (policy.kind == PolicyKind::rainbow) {
      std::vector<const raster::StateTensor*> batch;
      for (int id : ids) batch.push_back(&tensors[static_cast<std::size_t>(id)]);
      const auto input = nn::states_to_input<float>(batch);
      const auto out = policy.network->evaluate(input, static_cast<int>(ids.size()), nn::NoiseMode::zero,
                                                nn::NormMode::running);
      const auto acts = greedy_for(out, policy.network->shape());
      for (std::size_t k = 0; k < ids.size(); ++k) joint[static_cast<std::size_t>(ids[k])] = acts[k];
    } else {
      for (int id : ids) {
        joint[static_cast<std::size_t>(id)] =
            baseline_action(policy, state.pedestrians[static_cast<std::size_t>(id)], state, sc, &rng);
      }
    }
    auto res = environment.step(state, joint);
    state = std::move(res.state);
    if (keep_trace) {
      rep.events.push_back(std::move(res.events));
      rep.trace.push_back(snapshot(state));
    }
    if (policy.kind == PolicyKind::rainbow) {
      for (int id : active_ids(state)) {
        tensors[static_cast<std::size_t>(id)].push_frame(
            std::make_shared<const raster::Raster>(rasterizer->rasterize(state, id)));
      }
    }
  }
  rep.total_frames = state.frame;
  rep.n_l = state.per_exit_evacuee_counts.at(0);
  rep.n_b = state.per_exit_evacuee_counts.at(1);
  rep.w_l = sc.exits.at(0).width;
  rep.w_b = sc.exits.at(1).width;
  rep.r_util = r_util(rep.n_l, rep.n_b, rep.w_l, rep.w_b);
  return rep;
}

std::vector<EvalReport> evaluate(const PolicyHandle& policy, env::ScenarioFamily family,
                                 const env::ScenarioParams& params, int n_seeds,
                                 std::uint64_t first_seed, bool keep_trace) {
  if (n_seeds < 0) throw std::invalid_argument("seed count must be non-negative");
  std::vector<EvalReport> reports(static_cast<std::size_t>(n_seeds));
  std::vector<std::string> errors(reports.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n_seeds; ++i) {
    try {
      const std::uint64_t seed = first_seed + static_cast<std::uint64_t>(i);
      const auto sc = env::build_scenario(family, params, seed);
      // Policy randomness is keyed to the scenario seed only.
      reports[static_cast<std::size_t>(i)] = run_episode(policy, sc, seed ^ 0x9e3779b97f4a7c15ULL, keep_trace);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw std::runtime_error("evaluation failed: " + e);
  }
  return reports;
}

EvalSummary summarize(std::span<const EvalReport> reports) {
  EvalSummary s;
  s.runs = static_cast<int>(reports.size());
  if (reports.empty()) return s;
  for (const auto& r : reports) {
    s.mean_total_frames += r.total_frames;
    s.mean_n_l += r.n_l;
    s.mean_n_b += r.n_b;
    s.mean_r_util += r.r_util;
  }
  const double n = static_cast<double>(reports.size());
  s.mean_total_frames /= n;
  s.mean_n_l /= n;
  s.mean_n_b /= n;
  s.mean_r_util /= n;
  return s;
}

std::string metrics_row(const EvalReport& r) {
  return r.scenario + "," + std::to_string(r.seed) + "," + r.policy + "," + std::to_string(r.total_frames) +
         "," + std::to_string(r.n_l) + "," + std::to_string(r.n_b) + "," + fmt(r.r_util) + "," + fmt(r.w_l) +
         "," + fmt(r.w_b);
}

void write_metrics_csv(std::span<const EvalReport> reports, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kMetricsHeader << "\n";
  for (const auto& r : reports) out << metrics_row(r) << "\n";
}

namespace {

json params_json(env::ScenarioFamily family, const env::ScenarioParams& p) {
  env::RoomScenario sc;
  sc.family = family;
  sc.params = p;
  json j = env::scenario_to_json(sc);
  j.erase("seed");
  return j;
}

void write_trace(const EvalReport& r, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "frame,id,x,y,active\n";
  for (const auto& f : r.trace) {
    for (std::size_t i = 0; i < f.positions.size(); ++i) {
      out << f.frame << "," << i << "," << fmt(f.positions[i].x) << "," << fmt(f.positions[i].y) << ","
          << int(f.active[i]) << "\n";
    }
  }
}

std::vector<FrameRecord> read_trace(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read trace " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<FrameRecord> frames;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int frame = 0;
    int id = 0;
    double x = 0;
    double y = 0;
    int active = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%d", &frame, &id, &x, &y, &active) != 5) {
      throw std::runtime_error("malformed trace line: " + line);
    }
    if (frames.empty() || frames.back().frame != frame) frames.push_back({frame, {}, {}});
    frames.back().positions.push_back({x, y});
    frames.back().active.push_back(static_cast<char>(active));
  }
  return frames;
}

}  // namespace

void write_eval_run(std::span<const EvalReport> reports, const PolicyHandle& policy,
                    env::ScenarioFamily family, const env::ScenarioParams& params, const fs::path& dir) {
  fs::create_directories(dir / "traces");
  write_metrics_csv(reports, dir / "metrics.csv");

  const auto s = summarize(reports);
  json summary = {{"runs", s.runs},
                  {"mean_total_frames", s.mean_total_frames},
                  {"mean_N_l", s.mean_n_l},
                  {"mean_N_b", s.mean_n_b},
                  {"mean_r_util", s.mean_r_util}};
  std::ofstream(dir / "summary.json") << summary.dump(2) << "\n";

  json runs = json::array();
  for (const auto& r : reports) {
    runs.push_back({{"seed", r.seed}, {"total_frames", r.total_frames}, {"N_l", r.n_l}, {"N_b", r.n_b},
                    {"w_l", r.w_l}, {"w_b", r.w_b}, {"r_util", r.r_util},
                    {"trace", "traces/seed_" + std::to_string(r.seed) + ".csv"}});
    write_trace(r, dir / "traces" / ("seed_" + std::to_string(r.seed) + ".csv"));
  }
  json run = {{"policy", policy.label()},
              {"checkpoint", policy.checkpoint.string()},
              {"scenario", params_json(family, params)},
              {"runs", runs}};
  std::ofstream(dir / "run.json") << run.dump(2) << "\n";
}

std::vector<int> render_frames(int total_frames, int interval) {
  if (interval <= 0) throw std::invalid_argument("render interval must be positive");
  std::vector<int> frames;
  for (int f = 0; f <= total_frames; f += interval) frames.push_back(f);
  return frames;
}

std::vector<fs::path> render_run(const fs::path& dir, int interval) {
  std::ifstream in(dir / "run.json");
  if (!in) throw std::runtime_error("no run.json in " + dir.string());
  const json run = json::parse(in);
  const json& scj = run.at("scenario");
  const auto family = env::parse_family(scj.at("family").get<std::string>());
  env::ScenarioParams params;
  env::apply_json(params, scj);
  if (interval <= 0) interval = family == env::ScenarioFamily::delayed_open ? 15 : 10;

  const fs::path frames_dir = dir / "frames";
  fs::create_directories(frames_dir);
  std::ofstream summary(dir / "render_summary.csv", std::ios::binary);
  if (!summary) throw std::runtime_error("cannot write into " + dir.string());
  summary << kMetricsHeader << "\n";

  std::vector<fs::path> written;
  for (const auto& r : run.at("runs")) {
    const auto seed = r.at("seed").get<std::uint64_t>();
    const auto sc = env::build_scenario(family, params, seed);
    const raster::Rasterizer rz(sc);
    const auto trace = read_trace(dir / r.at("trace").get<std::string>());
    const int total = r.at("total_frames").get<int>();
    for (int f : render_frames(total, interval)) {
      const auto it = std::find_if(trace.begin(), trace.end(), [f](const FrameRecord& fr) { return fr.frame == f; });
      if (it == trace.end()) throw std::runtime_error("trace lacks frame " + std::to_string(f));
      env::SimulationState state;
      state.frame = f;
      for (std::size_t i = 0; i < it->positions.size(); ++i) {
        orca::PedestrianState p;
        p.id = static_cast<int>(i);
        p.position = it->positions[i];
        p.radius = sc.radius();
        p.active = it->active[i] != 0;
        state.pedestrians.push_back(p);
      }
      char name[64];
      std::snprintf(name, sizeof(name), "seed_%llu_frame_%03d.pgm", static_cast<unsigned long long>(seed), f);
      raster::write_pgm(rz.render_overview(state), frames_dir / name);
      written.push_back(frames_dir / name);
    }
    EvalReport rep;
    rep.scenario = scenario_descriptor(family, params);
    rep.seed = seed;
    rep.policy = run.at("policy").get<std::string>();
    rep.total_frames = total;
    rep.n_l = r.at("N_l").get<int>();
    rep.n_b = r.at("N_b").get<int>();
    rep.w_l = r.at("w_l").get<double>();
    rep.w_b = r.at("w_b").get<double>();
    rep.r_util = r_util(rep.n_l, rep.n_b, rep.w_l, rep.w_b);
    summary << metrics_row(rep) << "\n";
  }
  return written;
}

// ---------------------------------------------------------------- config

nlohmann::json run_config_to_json(const RunConfig& c) {
  json ratios = json::array();
  for (const auto& r : c.width_ratios) ratios.push_back(r.str());
  return {{"train", train::config_to_json(c.train)},
          {"scenario", params_json(c.family, c.params)},
          {"mixed_scenarios", c.mixed_scenarios},
          {"width_ratios", ratios},
          {"reward",
           {{"w1", c.reward.w1}, {"w2", c.reward.w2}, {"w3", c.reward.w3}, {"w4", c.reward.w4},
            {"penalty", c.reward.penalty}}},
          {"log_interval", c.log_interval},
          {"checkpoint_interval", c.checkpoint_interval}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* known[] = {"train", "scenario", "mixed_scenarios", "width_ratios",
                                  "reward", "log_interval", "checkpoint_interval"};
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return it.key() == k; }) ==
        std::end(known)) {
      throw std::invalid_argument("unknown config key: " + it.key());
    }
  }
  if (j.contains("train")) c.train = train::config_from_json(j.at("train"));
  if (j.contains("scenario")) {
    const auto& s = j.at("scenario");
    if (s.contains("family")) c.family = env::parse_family(s.at("family").get<std::string>());
    env::apply_json(c.params, s);
  }
  c.mixed_scenarios = j.value("mixed_scenarios", false);
  if (j.contains("width_ratios")) {
    for (const auto& r : j.at("width_ratios")) c.width_ratios.push_back(env::Ratio::parse(r.get<std::string>()));
  }
  if (j.contains("reward")) {
    const auto& r = j.at("reward");
    c.reward.w1 = r.value("w1", c.reward.w1);
    c.reward.w2 = r.value("w2", c.reward.w2);
    c.reward.w3 = r.value("w3", c.reward.w3);
    c.reward.w4 = r.value("w4", c.reward.w4);
    c.reward.penalty = r.value("penalty", c.reward.penalty);
  }
  c.reward.validate();
  c.log_interval = j.value("log_interval", c.log_interval);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  if (c.log_interval <= 0 || c.checkpoint_interval <= 0) {
    throw std::invalid_argument("log and checkpoint intervals must be positive");
  }
  c.params.horizon = c.train.horizon;
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return run_config_from_json(json::parse(in));
}

// ---------------------------------------------------------------- training

namespace {

struct Episode {
  env::Environment environment;
  raster::Rasterizer rasterizer;
  env::SimulationState state;
  std::vector<raster::StateTensor> tensors;

  explicit Episode(const env::RoomScenario& sc) : environment(sc), rasterizer(sc) {
    state = environment.reset();
    for (const auto& p : state.pedestrians) {
      tensors.push_back(raster::StateTensor::fresh(
          std::make_shared<const raster::Raster>(rasterizer.rasterize(state, p.id))));
    }
  }
};

class Trainer {
 public:
  Trainer(const RunConfig& cfg, fs::path out, const TrainOptions& opts)
      : cfg_(cfg), out_(std::move(out)), opts_(opts), shape_(cfg.train.network_shape()),
        dual_(nn::RainbowNetwork<float>(shape_, make_stream(cfg.train.seed, 5)())),
        adam_(train::make_adam(dual_.online.params())),
        buffer_(cfg.train.buffer_capacity, cfg.train.per_alpha, cfg.train.priority_floor),
        nstep_(cfg.train.n_step, cfg.train.gamma), scenario_rng_(make_stream(cfg.train.seed, 1)),
        act_rng_(make_stream(cfg.train.seed, 2)), replay_rng_(make_stream(cfg.train.seed, 3)),
        update_rng_(make_stream(cfg.train.seed, 4)) {
    cfg_.train.validate();
  }

  TrainSummary run() {
    fs::create_directories(out_ / "checkpoints");
    std::ofstream(out_ / "config.json") << run_config_to_json(cfg_).dump(2) << "\n";
    const fs::path latest = out_ / "checkpoints" / "latest.bin";
    if (opts_.resume && fs::exists(latest)) {
      restore(latest);
      trim_log();
    } else {
      std::ofstream log(out_ / "train_log.csv", std::ios::binary);
      log << kTrainLogHeader << "\n";
    }
    log_.open(out_ / "train_log.csv", std::ios::binary | std::ios::app);
    if (!log_) throw std::runtime_error("cannot write train_log.csv in " + out_.string());

    const long total = cfg_.train.total_train_frames;
    while (env_frame_ < total) {
      if (opts_.stop_after >= 0 && env_frame_ >= opts_.stop_after) break;
      step_frame();
      maybe_update();
      if (env_frame_ % cfg_.log_interval == 0) write_log_row();
      if (env_frame_ % cfg_.checkpoint_interval == 0 || env_frame_ == total) save(latest, true);
    }

    TrainSummary s;
    s.env_frames = env_frame_;
    s.updates = dual_.total_updates;
    s.syncs = dual_.syncs;
    s.episodes = episodes_done_;
    s.buffer_size = buffer_.size();
    if (env_frame_ == total) {
      s.final_checkpoint = out_ / "policy.bin";
      nn::save_network(dual_.online, s.final_checkpoint);
    }
    return s;
  }

 private:
  void start_episode() {
    env::ScenarioFamily family = cfg_.family;
    if (cfg_.mixed_scenarios) {
      std::uniform_int_distribution<int> pick(0, 2);
      family = static_cast<env::ScenarioFamily>(pick(scenario_rng_));
    }
    env::ScenarioParams params = cfg_.params;
    params.horizon = cfg_.train.horizon;
    if (family == env::ScenarioFamily::width_ratio && !cfg_.width_ratios.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, cfg_.width_ratios.size() - 1);
      params.width_ratio = cfg_.width_ratios[pick(scenario_rng_)];
    }
    const std::uint64_t seed = scenario_rng_();
    episode_.emplace(env::build_scenario(family, params, seed));
  }

  void step_frame() {
    if (!episode_) start_episode();
    Episode& ep = *episode_;
    const auto& sc = ep.environment.scenario();
    const env::SimulationState& state = ep.state;
    const auto ids = active_ids(state);

    std::vector<const raster::StateTensor*> batch;
    for (int id : ids) batch.push_back(&ep.tensors[static_cast<std::size_t>(id)]);
    const auto input = nn::states_to_input<float>(batch);
    // One noise draw per frame shared by every pedestrian's selection.
    const auto out = dual_.online.forward(input, static_cast<int>(ids.size()), nn::NoiseMode::sample,
                                          nn::NormMode::running, &act_rng_);
    const auto acts = greedy_for(out, shape_);
    std::vector<int> joint(state.pedestrians.size(), 0);
    for (std::size_t k = 0; k < ids.size(); ++k) joint[static_cast<std::size_t>(ids[k])] = acts[k];

    auto res = ep.environment.step(state, joint);
    const auto exits = open_exit_centers(sc, state.frame);
    const bool horizon_hit = res.state.frame >= sc.horizon();
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto id = static_cast<std::size_t>(ids[k]);
      const auto& before = state.pedestrians[id];
      const auto& after = res.state.pedestrians[id];
      const bool evacuated = res.state.evacuated_through[id] >= 0;
      reward::RewardComponents c;
      c.goal = reward::goal_reward(after.position, before.position, exits, cfg_.reward.w4);
      c.alignment = reward::alignment_reward(after.optimal_velocity, before.position, exits, before.max_speed);
      c.smooth = reward::smooth_reward(after.optimal_velocity, before.optimal_velocity);
      const double r = reward::total_reward(c, cfg_.reward, evacuated);

      auto next = ep.tensors[id].pushed(
          std::make_shared<const raster::Raster>(ep.rasterizer.rasterize(res.state, ids[k])));
      replay::RawTransition raw{ep.tensors[id], acts[k], r, next, evacuated};
      for (auto& t : nstep_.add(ids[k], std::move(raw), evacuated || horizon_hit)) buffer_.push(std::move(t));
      ep.tensors[id] = std::move(next);
    }
    ep.state = std::move(res.state);
    ++env_frame_;

    if (ep.state.all_evacuated() || ep.state.frame >= sc.horizon()) {
      ++episodes_done_;
      recent_frames_.push_back(ep.state.frame);
      if (recent_frames_.size() > 100) recent_frames_.pop_front();
      episode_.reset();
    }
  }

  void maybe_update() {
    const auto& t = cfg_.train;
    if (env_frame_ <= t.learning_start) return;
    if ((env_frame_ - t.learning_start) % t.update_interval != 0) return;
    if (buffer_.size() < static_cast<std::size_t>(t.batch_size)) return;
    const auto sample = buffer_.sample(static_cast<std::size_t>(t.batch_size), t.per_beta(env_frame_), replay_rng_);
    const auto batch = train::make_batch<float>(sample);
    auto stats = train::update_step(batch, dual_, adam_, t, update_rng_);
    if (!std::isfinite(stats.loss)) throw std::runtime_error("non-finite loss at frame " + std::to_string(env_frame_));
    buffer_.update_priorities(sample.handles, stats.row_losses);
    train::maybe_sync_target(dual_, t);
    loss_sum_ += stats.loss;
    q_sum_ += stats.mean_q;
    ++window_updates_;
  }

  void write_log_row() {
    const double mean_loss = window_updates_ ? loss_sum_ / window_updates_ : 0.0;
    const double mean_q = window_updates_ ? q_sum_ / window_updates_ : 0.0;
    const double mean_frames =
        recent_frames_.empty()
            ? 0.0
            : std::accumulate(recent_frames_.begin(), recent_frames_.end(), 0.0) / recent_frames_.size();
    log_ << env_frame_ << "," << dual_.total_updates << "," << fmt(mean_loss, "%.9g") << "," << fmt(mean_q, "%.9g")
         << "," << buffer_.size() << "," << episodes_done_ << "," << fmt(mean_frames, "%.6g") << "\n";
    log_.flush();
    if (opts_.progress) {
      *opts_.progress << "frame " << env_frame_ << " updates " << dual_.total_updates << " loss "
                      << fmt(mean_loss, "%.4f") << " q " << fmt(mean_q, "%.3f") << " episodes " << episodes_done_
                      << " mean_frames " << fmt(mean_frames, "%.1f") << std::endl;
    }
    loss_sum_ = 0.0;
    q_sum_ = 0.0;
    window_updates_ = 0;
  }

  static void append_moments(nn::Checkpoint& ck, const nn::ParameterSet<float>& names,
                             const std::vector<nn::Matrix<float>>& values, const std::string& prefix) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      nn::CheckpointEntry e;
      e.name = prefix + names.name(i);
      e.rows = values[i].rows();
      e.cols = values[i].cols();
      e.data.assign(values[i].data(), values[i].data() + values[i].size());
      ck.entries.push_back(std::move(e));
    }
  }

  static void load_moments(const nn::Checkpoint& ck, const nn::ParameterSet<float>& names,
                           std::vector<nn::Matrix<float>>& values, const std::string& prefix) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto* e = ck.find(prefix + names.name(i));
      if (!e || e->rows != values[i].rows() || e->cols != values[i].cols()) {
        throw std::runtime_error("checkpoint lacks optimizer state " + prefix + names.name(i));
      }
      std::copy(e->data.begin(), e->data.end(), values[i].data());
    }
  }

  void save(const fs::path& latest, bool keep_numbered) {
    nn::Checkpoint ck;
    ck.metadata["shape"] = nn::shape_to_json(shape_);
    ck.metadata["config"] = run_config_to_json(cfg_);
    ck.metadata["env_frame"] = env_frame_;
    ck.metadata["total_updates"] = dual_.total_updates;
    ck.metadata["updates_since_sync"] = dual_.updates_since_sync;
    ck.metadata["syncs"] = dual_.syncs;
    ck.metadata["episodes_done"] = episodes_done_;
    ck.metadata["adam_step"] = adam_.step;
    ck.metadata["recent_frames"] = std::vector<int>(recent_frames_.begin(), recent_frames_.end());
    ck.metadata["rng"] = {{"scenario", rng_state(scenario_rng_)}, {"act", rng_state(act_rng_)},
                          {"replay", rng_state(replay_rng_)}, {"update", rng_state(update_rng_)}};
    nn::append_entries(ck, dual_.online.params(), "online.");
    nn::append_entries(ck, dual_.target.params(), "target.");
    append_moments(ck, dual_.online.params(), adam_.m, "adam.m.");
    append_moments(ck, dual_.online.params(), adam_.v, "adam.v.");
    nn::write_checkpoint(ck, latest);
    if (keep_numbered) {
      fs::copy_file(latest, out_ / "checkpoints" / ("frame_" + std::to_string(env_frame_) + ".bin"),
                    fs::copy_options::overwrite_existing);
    }
  }

  void restore(const fs::path& path) {
    const nn::Checkpoint ck = nn::read_checkpoint(path);
    if (!(nn::shape_from_json(ck.metadata.at("shape")) == shape_)) {
      throw std::runtime_error("checkpoint network shape differs from the config");
    }
    nn::load_entries(ck, dual_.online.params(), "online.");
    nn::load_entries(ck, dual_.target.params(), "target.");
    load_moments(ck, dual_.online.params(), adam_.m, "adam.m.");
    load_moments(ck, dual_.online.params(), adam_.v, "adam.v.");
    adam_.step = ck.metadata.at("adam_step").get<long>();
    env_frame_ = ck.metadata.at("env_frame").get<long>();
    dual_.total_updates = ck.metadata.at("total_updates").get<long>();
    dual_.updates_since_sync = ck.metadata.at("updates_since_sync").get<long>();
    dual_.syncs = ck.metadata.at("syncs").get<long>();
    episodes_done_ = ck.metadata.at("episodes_done").get<long>();
    for (int f : ck.metadata.at("recent_frames")) recent_frames_.push_back(f);
    const auto& r = ck.metadata.at("rng");
    restore_rng(scenario_rng_, r.at("scenario").get<std::string>());
    restore_rng(act_rng_, r.at("act").get<std::string>());
    restore_rng(replay_rng_, r.at("replay").get<std::string>());
    restore_rng(update_rng_, r.at("update").get<std::string>());
    if (opts_.progress) *opts_.progress << "resumed at frame " << env_frame_ << std::endl;
  }

  // Drops log rows written after the restored checkpoint.
  void trim_log() {
    const fs::path path = out_ / "train_log.csv";
    std::vector<std::string> keep{std::string(kTrainLogHeader)};
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (!line.empty() && std::stol(line.substr(0, line.find(','))) <= env_frame_) keep.push_back(line);
    }
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    for (const auto& l : keep) out << l << "\n";
  }

  RunConfig cfg_;
  fs::path out_;
  TrainOptions opts_;
  nn::NetworkShape shape_;
  train::DualParams<float> dual_;
  train::AdamState<float> adam_;
  replay::PriorityBuffer buffer_;
  replay::NStepAccumulator nstep_;
  nn::Rng scenario_rng_, act_rng_, replay_rng_, update_rng_;
  std::optional<Episode> episode_;
  std::ofstream log_;

  long env_frame_ = 0;
  long episodes_done_ = 0;
  std::deque<int> recent_frames_;
  double loss_sum_ = 0.0;
  double q_sum_ = 0.0;
  long window_updates_ = 0;
};

}  // namespace

TrainSummary train(const RunConfig& cfg, const fs::path& out, const TrainOptions& opts) {
  Trainer t(cfg, out, opts);
  return t.run();
}

}  // namespace evac::harness
