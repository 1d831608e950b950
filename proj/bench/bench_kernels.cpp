#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>

#include "evac/environment.hpp"
#include "evac/network.hpp"
#include "evac/raster.hpp"

using namespace evac;

namespace {

std::vector<orca::PedestrianState> crowd(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(4, 96), vel(-2.5, 2.5);
  std::vector<orca::PedestrianState> peds;
  while (static_cast<int>(peds.size()) < n) {
    const Vec2 p{pos(rng), pos(rng)};
    bool ok = true;
    for (const auto& q : peds) ok &= distance(p, q.position) > 4.2;
    if (!ok) continue;
    orca::PedestrianState s;
    s.id = static_cast<int>(peds.size());
    s.position = p;
    s.velocity = {vel(rng), vel(rng)};
    s.preferred_velocity = {vel(rng), vel(rng)};
    peds.push_back(s);
  }
  return peds;
}

orca::ObstacleSet box() {
  orca::ObstacleSet room;
  room.add_rect({{-2, -2}, {102, 0}});
  room.add_rect({{-2, 100}, {102, 102}});
  room.add_rect({{-2, 0}, {0, 100}});
  room.add_rect({{100, 0}, {102, 100}});
  return room;
}

void BM_OrcaParallel(benchmark::State& state) {
  auto peds = crowd(static_cast<int>(state.range(0)), 1);
  const auto room = box();
  for (auto _ : state) {
    orca::step_velocities(peds, room, orca::OrcaParams{});
    benchmark::DoNotOptimize(peds.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
  state.counters["threads"] = omp_get_max_threads();
}

void BM_OrcaSerial(benchmark::State& state) {
  auto peds = crowd(static_cast<int>(state.range(0)), 1);
  const auto room = box();
  for (auto _ : state) {
    orca::step_velocities_serial(peds, room, orca::OrcaParams{});
    benchmark::DoNotOptimize(peds.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

// First convolution of the full network: 3x84x84 input, 32 filters 8x8 stride 4.
struct ConvCase {
  int batch;
  nn::Matrix<float> input;
  nn::Matrix<float> weight;
  explicit ConvCase(int b) : batch(b) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<float> u(0, 1);
    input = nn::Matrix<float>::NullaryExpr(3, b * 84 * 84, [&] { return u(rng); });
    weight = nn::Matrix<float>::NullaryExpr(32, 3 * 8 * 8, [&] { return u(rng) - 0.5f; });
  }
};

void BM_ConvIm2colGemm(benchmark::State& state) {
  const ConvCase c(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    const auto cols = nn::im2col(c.input, c.batch, 3, 84, 8, 4);
    nn::Matrix<float> out = c.weight * cols;
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ConvReference(benchmark::State& state) {
  const ConvCase c(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto out = nn::conv_forward_reference(c.input, c.weight, c.batch, 3, 84, 8, 4);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Rasterize(benchmark::State& state) {
  env::ScenarioParams p;
  p.pedestrian_count = static_cast<int>(state.range(0));
  const auto sc = env::build_scenario(env::ScenarioFamily::width_ratio, p, 0);
  const env::Environment e(sc);
  const raster::Rasterizer rz(sc);
  const auto s = e.reset();
  int subject = 0;
  for (auto _ : state) {
    auto img = rz.rasterize(s, subject);
    subject = (subject + 1) % p.pedestrian_count;
    benchmark::DoNotOptimize(img.pixels.data());
  }
  state.SetItemsProcessed(state.iterations());
}

void BM_NetworkForward(benchmark::State& state) {
  nn::NetworkShape shape;
  const nn::RainbowNetwork<float> net(shape, 1);
  const int batch = static_cast<int>(state.range(0));
  const ConvCase c(batch);
  for (auto _ : state) {
    auto out = net.evaluate(c.input, batch, nn::NoiseMode::zero, nn::NormMode::running);
    benchmark::DoNotOptimize(out.probs.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

}  // namespace

BENCHMARK(BM_OrcaParallel)->Arg(12)->Arg(36)->Arg(100);
BENCHMARK(BM_OrcaSerial)->Arg(12)->Arg(36)->Arg(100);
BENCHMARK(BM_ConvIm2colGemm)->Arg(1)->Arg(32);
BENCHMARK(BM_ConvReference)->Arg(1)->Arg(32);
BENCHMARK(BM_Rasterize)->Arg(12)->Arg(36);
BENCHMARK(BM_NetworkForward)->Arg(1)->Arg(32);

BENCHMARK_MAIN();
