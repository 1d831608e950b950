#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "evac/harness.hpp"
#include "oracles.hpp"

using namespace evac;
using namespace evac::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  return out;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("evac_test_" + name);
  fs::remove_all(p);
  return p;
}

env::ScenarioParams small_room(int m) {
  env::ScenarioParams p;
  p.side_length = 40;
  p.pedestrian_count = m;
  return p;
}

orca::PedestrianState ped_at(int id, Vec2 p) {
  orca::PedestrianState s;
  s.id = id;
  s.position = p;
  return s;
}

env::SimulationState state_of(std::vector<orca::PedestrianState> peds) {
  env::SimulationState s;
  s.pedestrians = std::move(peds);
  s.evacuated_through.assign(s.pedestrians.size(), -1);
  s.per_exit_evacuee_counts = {0, 0};
  return s;
}

// Tiny network and short run so the loop finishes in seconds.
RunConfig tiny_run(long total, long learning_start, long sync) {
  RunConfig c;
  c.train.convs = {{4, 8, 4}, {4, 4, 2}, {4, 3, 1}};
  c.train.hidden = 16;
  c.train.batch_size = 4;
  c.train.buffer_capacity = 2000;
  c.train.total_train_frames = total;
  c.train.learning_start = learning_start;
  c.train.target_sync_interval = sync;
  c.train.seed = 5;
  c.params = small_room(2);
  c.log_interval = 100;
  c.checkpoint_interval = 1000;
  return c;
}

}  // namespace

TEST_CASE("r_util examples") {
  CHECK(r_util(6, 6, 8, 8) == 1.0);
  CHECK(r_util(18, 18, 16, 8) == doctest::Approx(0.5));
  CHECK(r_util(0, 12, 8, 8) == 0.0);
  CHECK(r_util(12, 0, 8, 8) == 0.0);
  CHECK(r_util(0, 0, 8, 8) == 1.0);
}

TEST_CASE("r_util matches direct arithmetic, symmetry and scale invariance") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> n(0, 36);
  std::uniform_int_distribution<int> w(1, 20);
  for (int trial = 0; trial < 1000; ++trial) {
    const int a = n(rng), b = n(rng);
    const double wl = w(rng), wb = w(rng);
    const double r = r_util(a, b, wl, wb);
    CHECK(r == oracle::utilization(a, b, wl, wb));
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
    CHECK(r_util(a, b, wl, wl) == r_util(b, a, wl, wl));
    CHECK(r_util(a, b, wl * 2.5, wb * 2.5) == doctest::Approx(r).epsilon(1e-12));
  }
}

TEST_CASE("baseline: due east of the only open exit walks west") {
  const auto sc = env::build_scenario(env::ScenarioFamily::width_ratio, small_room(2), 0);
  auto only_left = sc;
  only_left.exits[1].open_frame = 1000;
  const auto ped = ped_at(0, {25.0, sc.exits[0].center.y});
  const auto st = state_of({ped});
  CHECK(baseline_exit(PolicyHandle::baseline(PolicyKind::nearest_exit), ped, st, only_left) == 0);
  CHECK(baseline_action(PolicyHandle::baseline(PolicyKind::nearest_exit), ped, st, only_left) == 4);
  CHECK(direction_action({0, 0}, {0, -5}) == 6);
  CHECK(direction_action({0, 0}, {3, 3}) == 1);
}

TEST_CASE("baseline: equidistant exits tie to Exit_l") {
  const auto sc = env::build_scenario(env::ScenarioFamily::width_ratio, small_room(2), 0);
  const auto ped = ped_at(0, {30.0, 30.0});  // on the diagonal, equal distance to both centers
  const auto st = state_of({ped});
  CHECK(baseline_exit(PolicyHandle::baseline(PolicyKind::nearest_exit), ped, st, sc) == 0);
  CHECK(baseline_exit(PolicyHandle::baseline(PolicyKind::multi_factor), ped, st, sc) == 0);
}

TEST_CASE("baseline: multi_factor avoids a crowded exit") {
  const auto sc = env::build_scenario(env::ScenarioFamily::width_ratio, small_room(12), 0);
  std::vector<orca::PedestrianState> peds = {ped_at(0, {30.0, 30.0})};
  // Ten pedestrians closer to Exit_b than the subject.
  for (int k = 0; k < 10; ++k) peds.push_back(ped_at(k + 1, {sc.exits[1].center.x - 9 + 2 * k, 6.0}));
  const auto st = state_of(peds);
  CHECK(baseline_exit(PolicyHandle::baseline(PolicyKind::multi_factor), peds[0], st, sc) == 0);
  // Mirror the crowd onto Exit_l and the choice flips.
  for (int k = 0; k < 10; ++k) peds[static_cast<std::size_t>(k + 1)].position = {6.0, sc.exits[0].center.y - 9 + 2 * k};
  CHECK(baseline_exit(PolicyHandle::baseline(PolicyKind::multi_factor), peds[0], state_of(peds), sc) == 1);
}

TEST_CASE("nearest_exit evacuates an adjacent pedestrian within 3 frames") {
  auto sc = env::build_scenario(env::ScenarioFamily::width_ratio, small_room(2), 0);
  sc.spawn_positions = {{sc.wall_width() + 2.5, sc.exits[0].center.y}};
  sc.designated_exit = {0};
  sc.params.pedestrian_count = 1;
  const auto rep = run_episode(PolicyHandle::baseline(PolicyKind::nearest_exit), sc, 0);
  CHECK(rep.total_frames <= 3);
  CHECK(rep.n_l == 1);
  CHECK(rep.n_b == 0);
}

TEST_CASE("random policy runs end by the horizon and reports are deterministic") {
  auto p = small_room(4);
  p.horizon = 400;
  const auto policy = PolicyHandle::baseline(PolicyKind::uniform_random);
  const auto a = evaluate(policy, env::ScenarioFamily::width_ratio, p, 6, 10);
  const auto b = evaluate(policy, env::ScenarioFamily::width_ratio, p, 6, 10);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].seed == 10 + i);
    CHECK(a[i].total_frames <= 400);
    CHECK(a[i].n_l + a[i].n_b <= 4);
    CHECK(metrics_row(a[i]) == metrics_row(b[i]));
    REQUIRE(a[i].trace.size() == b[i].trace.size());
    CHECK(a[i].trace.size() == static_cast<std::size_t>(a[i].total_frames + 1));
    for (std::size_t f = 0; f < a[i].trace.size(); ++f) {
      for (std::size_t k = 0; k < a[i].trace[f].positions.size(); ++k) {
        REQUIRE(a[i].trace[f].positions[k] == b[i].trace[f].positions[k]);
      }
    }
  }
}

TEST_CASE("total_frames is the last evacuation frame or the horizon") {
  const auto policy = PolicyHandle::baseline(PolicyKind::nearest_exit);
  for (const auto& r : evaluate(policy, env::ScenarioFamily::distribution_ratio, small_room(6), 5, 0)) {
    if (r.n_l + r.n_b == 6) {
      CHECK(r.total_frames < 200);
      CHECK(r.trace.back().frame == r.total_frames);
      CHECK(std::none_of(r.trace.back().active.begin(), r.trace.back().active.end(), [](char c) { return c != 0; }));
    } else {
      CHECK(r.total_frames == 200);
    }
  }
}

TEST_CASE("render frames, byte-identical renders and CSV self-consistency") {
  CHECK(render_frames(60, 10) == std::vector<int>{0, 10, 20, 30, 40, 50, 60});
  CHECK(render_frames(44, 15) == std::vector<int>{0, 15, 30});
  CHECK_THROWS(render_frames(10, 0));

  const auto dir = scratch("render");
  const auto policy = PolicyHandle::baseline(PolicyKind::multi_factor);
  auto p = small_room(6);
  const auto reports = evaluate(policy, env::ScenarioFamily::width_ratio, p, 3, 0);
  write_eval_run(reports, policy, env::ScenarioFamily::width_ratio, p, dir);
  const auto first = render_run(dir, 10);
  std::vector<std::string> bytes;
  for (const auto& f : first) bytes.push_back(slurp(f));
  const auto second = render_run(dir, 10);
  REQUIRE(first == second);
  for (std::size_t i = 0; i < second.size(); ++i) CHECK(slurp(second[i]) == bytes[i]);
  std::size_t expected = 0;
  for (const auto& r : reports) expected += render_frames(r.total_frames, 10).size();
  CHECK(first.size() == expected);

  for (const auto* name : {"render_summary.csv", "metrics.csv"}) {
    std::ifstream in(dir / name);
    std::string line;
    std::getline(in, line);
    CHECK(line == kMetricsHeader);
    int rows = 0;
    while (std::getline(in, line)) {
      const auto c = split(line, ',');
      REQUIRE(c.size() == 9);
      const int n_l = std::stoi(c[4]), n_b = std::stoi(c[5]);
      CHECK(std::stod(c[6]) == r_util(n_l, n_b, std::stod(c[7]), std::stod(c[8])));
      ++rows;
    }
    CHECK(rows == 3);
  }
  CHECK(slurp(dir / "render_summary.csv") == slurp(dir / "metrics.csv"));
  CHECK_THROWS(render_run(scratch("missing"), 10));
  fs::remove_all(dir);
}

TEST_CASE("run config json round trip") {
  auto c = tiny_run(500, 50, 100);
  c.width_ratios = {env::Ratio{1, 1}, env::Ratio{1, 2}};
  const auto back = run_config_from_json(run_config_to_json(c));
  CHECK(back.train.total_train_frames == 500);
  CHECK(back.train.hidden == 16);
  CHECK(back.params.side_length == 40);
  CHECK(back.width_ratios == c.width_ratios);
  CHECK_THROWS(run_config_from_json(nlohmann::json{{"bogus", 1}}));
}

TEST_CASE("training performs no updates before the learning start") {
  const auto dir = scratch("gate");
  auto cfg = tiny_run(500, 50, 1000);
  TrainOptions opts;
  opts.stop_after = 10;
  const auto s = harness::train(cfg, dir, opts);
  CHECK(s.env_frames == 10);
  CHECK(s.updates == 0);
  fs::remove_all(dir);
}

TEST_CASE("update and sync counts follow the loop arithmetic") {
  const auto dir = scratch("counts");
  const auto s = harness::train(tiny_run(5000, 1000, 1000), dir);
  CHECK(s.env_frames == 5000);
  CHECK(s.updates == 4000);
  CHECK(s.syncs == 4);
  CHECK(fs::exists(dir / "policy.bin"));
  CHECK(fs::exists(dir / "checkpoints" / "latest.bin"));

  // The log has the documented header and monotone counters.
  std::ifstream log(dir / "train_log.csv");
  std::string line;
  std::getline(log, line);
  CHECK(line == kTrainLogHeader);
  long prev_frame = 0;
  while (std::getline(log, line)) {
    const auto c = split(line, ',');
    REQUIRE(c.size() == 7);
    const long frame = std::stol(c[0]);
    CHECK(frame > prev_frame);
    CHECK(std::stol(c[1]) == std::max(0L, frame - 1000));
    prev_frame = frame;
  }
  CHECK(prev_frame == 5000);

  // Policy checkpoint round trip gives identical Q values on a probe state.
  const auto net = load_policy_network(dir / "policy.bin");
  const auto copy_path = dir / "copy.bin";
  nn::save_network(net, copy_path);
  const auto copy = load_policy_network(copy_path);
  auto sc = env::build_scenario(env::ScenarioFamily::width_ratio, small_room(2), 3);
  env::Environment e(sc);
  raster::Rasterizer rz(sc);
  const auto t = raster::StateTensor::fresh(std::make_shared<const raster::Raster>(rz.rasterize(e.reset(), 0)));
  const raster::StateTensor* probe[] = {&t};
  const auto x = nn::states_to_input<float>(probe);
  CHECK(nn::batch_q_values(net.evaluate(x, 1, nn::NoiseMode::zero, nn::NormMode::running), net.shape()) ==
        nn::batch_q_values(copy.evaluate(x, 1, nn::NoiseMode::zero, nn::NormMode::running), copy.shape()));
  // Full training checkpoints load as policies too.
  CHECK_NOTHROW(load_policy_network(dir / "checkpoints" / "latest.bin"));
  fs::remove_all(dir);
}

TEST_CASE("update count equals frames past the learning start") {
  for (auto [total, start] : {std::pair{60L, 20L}, std::pair{45L, 44L}, std::pair{30L, 30L}}) {
    const auto dir = scratch("gate2");
    const auto s = harness::train(tiny_run(total, start, 1000), dir);
    CHECK(s.updates == std::max(0L, total - start));
    fs::remove_all(dir);
  }
}

TEST_CASE("training is reproducible and resumable") {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  auto cfg = tiny_run(600, 100, 200);
  cfg.checkpoint_interval = 300;
  harness::train(cfg, a);
  harness::train(cfg, b);
  CHECK(slurp(a / "train_log.csv") == slurp(b / "train_log.csv"));
  CHECK(slurp(a / "policy.bin") == slurp(b / "policy.bin"));

  const auto c = scratch("resume");
  TrainOptions stop;
  stop.stop_after = 350;
  const auto partial = harness::train(cfg, c, stop);
  CHECK(partial.env_frames == 350);
  TrainOptions resume;
  resume.resume = true;
  const auto done = harness::train(cfg, c, resume);
  CHECK(done.env_frames == 600);
  // The replay buffer is not checkpointed, so updates pause until it refills to a batch.
  CHECK(done.updates <= 500);
  CHECK(done.updates >= 500 - cfg.train.batch_size);
  CHECK(fs::exists(c / "policy.bin"));
  // Rows up to the restored checkpoint match the uninterrupted run.
  const auto full = split(slurp(a / "train_log.csv"), '\n');
  const auto resumed = split(slurp(c / "train_log.csv"), '\n');
  REQUIRE(resumed.size() == full.size());
  for (std::size_t i = 0; i < 4; ++i) CHECK(resumed[i] == full[i]);
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}
