#include <doctest.h>

#include <random>

#include "evac/trainer.hpp"
#include "oracles.hpp"

using namespace evac;
using namespace evac::train;
using nn::NetworkShape;
using nn::NoiseMode;
using nn::NormMode;

namespace {

NetworkShape toy_shape() {
  NetworkShape s;
  s.in_channels = 3;
  s.input_size = 12;
  s.convs = {{4, 4, 2}, {4, 3, 1}};
  s.hidden = 16;
  s.atoms = 8;
  s.actions = 4;
  return s;
}

TrainConfig toy_config() {
  TrainConfig c;
  const auto s = toy_shape();
  c.convs = s.convs;
  c.hidden = s.hidden;
  c.atoms = s.atoms;
  c.batch_size = 8;
  c.learning_start = 0;
  c.total_train_frames = 1000;
  return c;
}

TrainBatch<double> toy_batch(const NetworkShape& s, int size, std::uint64_t seed, bool terminal) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  TrainBatch<double> b;
  b.size = size;
  const int cols = size * s.input_size * s.input_size;
  b.states = Matrix<double>::NullaryExpr(s.in_channels, cols, [&] { return u(rng); });
  b.next_states = Matrix<double>::NullaryExpr(s.in_channels, cols, [&] { return u(rng); });
  for (int i = 0; i < size; ++i) {
    b.actions.push_back(static_cast<int>(rng() % static_cast<unsigned>(s.actions)));
    b.rewards.push_back(-5 + 10 * u(rng));
    b.discounts.push_back(0.99 * 0.99 * 0.99);
    b.dones.push_back(terminal ? 1 : 0);
    b.weights.push_back(1.0);
  }
  return b;
}

// 1x1 input, two actions, three atoms; only the advantage biases are set.
nn::RainbowNetwork<double> biased_net(double a0_top, double a1_top) {
  NetworkShape s;
  s.in_channels = 1;
  s.input_size = 1;
  s.convs = {};
  s.hidden = 1;
  s.atoms = 3;
  s.actions = 2;
  s.v_min = -1;
  s.v_max = 1;
  nn::RainbowNetwork<double> net(s, 0);
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    if (net.params().trainable(i)) net.params()[i].setZero();
  }
  auto& b = net.params()[net.params().index_of("advantage.out.mu_b")];
  b(2) = a0_top;  // action 0, atom z = +1
  b(5) = a1_top;  // action 1, atom z = +1
  return net;
}

}  // namespace

TEST_CASE("projection examples for terminal transitions") {
  NetworkShape s;  // 51 atoms on [-10, 10]
  const std::vector<double> unused(51, 1.0 / 51);
  auto p = project_distribution(0.2, 0.0, true, unused, s);
  CHECK(p[25] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p[26] == doctest::Approx(0.5).epsilon(1e-12));
  p = project_distribution(10.0, 0.0, true, unused, s);
  CHECK(p[50] == 1.0);
  p = project_distribution(-15.0, 0.0, true, unused, s);
  CHECK(p[0] == 1.0);
  for (double r : {-9.7, -3.3, 0.0, 0.05, 4.41, 9.99}) {
    const auto q = project_distribution(r, 0.9, true, unused, s);
    const auto o = oracle::terminal_projection(r, -10, 10, 51);
    for (int i = 0; i < 51; ++i) CHECK(q[static_cast<std::size_t>(i)] == doctest::Approx(o[static_cast<std::size_t>(i)]).epsilon(1e-9));
  }
}

TEST_CASE("projection of bootstrapped targets stays a simplex with correct mean") {
  NetworkShape s;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> next(51);
    for (auto& x : next) x = u(rng);
    double z = 0;
    for (double x : next) z += x;
    for (auto& x : next) x /= z;
    const double r = -3 + 6 * u(rng);
    const double g = u(rng);
    const auto p = project_distribution(r, g, false, next, s);
    REQUIRE(p.size() == 51);
    double sum = 0;
    double mean = 0;
    double expect = 0;
    for (int i = 0; i < 51; ++i) {
      CHECK(p[static_cast<std::size_t>(i)] >= 0.0);
      sum += p[static_cast<std::size_t>(i)];
      mean += p[static_cast<std::size_t>(i)] * s.support(i);
      const double tz = r + g * s.support(i);
      expect += next[static_cast<std::size_t>(i)] * std::clamp(tz, s.v_min, s.v_max);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    // Linear splitting preserves the mean of the clipped shifted support.
    CHECK(mean == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("cross entropy examples") {
  std::vector<double> hot(51, 0.0);
  hot[7] = 1.0;
  CHECK(cross_entropy(hot, hot) == doctest::Approx(0.0));
  std::vector<double> half(51, 0.0);
  half[7] = 0.5;
  half[8] = 0.5;
  CHECK(cross_entropy(hot, half) == doctest::Approx(0.69315).epsilon(1e-5));
  const std::vector<double> uni(51, 1.0 / 51);
  CHECK(cross_entropy(uni, uni) == doctest::Approx(3.93183).epsilon(1e-5));
  // Zero predicted mass is floored rather than infinite.
  CHECK(cross_entropy(hot, std::vector<double>(51, 0.0)) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("categorical loss gradient matches finite differences on logits") {
  const int atoms = 5, actions = 3, batch = 2;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  nn::BatchOutput<double> out;
  out.batch = batch;
  out.actions = actions;
  out.atoms = atoms;
  out.logits = Matrix<double>::NullaryExpr(actions * atoms, batch, [&] { return n(rng); });
  auto softmax_into = [&](nn::BatchOutput<double>& o) {
    o.probs.resize(o.logits.rows(), o.logits.cols());
    for (int b = 0; b < batch; ++b) {
      for (int a = 0; a < actions; ++a) {
        const auto seg = o.logits.block(a * atoms, b, atoms, 1);
        const auto e = (seg.array() - seg.maxCoeff()).exp();
        o.probs.block(a * atoms, b, atoms, 1) = e / e.sum();
      }
    }
  };
  softmax_into(out);
  Matrix<double> target(atoms, batch);
  target << 0.1, 0.0, 0.2, 0.5, 0.3, 0.0, 0.4, 0.0, 0.0, 0.5;
  const std::vector<int> act = {2, 0};
  const std::vector<double> w = {0.7, 1.0};
  const auto res = categorical_loss(out, act, target, w);
  for (int b = 0; b < batch; ++b) {
    std::vector<double> t(atoms), p(atoms);
    for (int i = 0; i < atoms; ++i) {
      t[static_cast<std::size_t>(i)] = target(i, b);
      p[static_cast<std::size_t>(i)] = out.prob(b, act[static_cast<std::size_t>(b)], i);
    }
    CHECK(res.row_losses[static_cast<std::size_t>(b)] == doctest::Approx(cross_entropy(t, p)).epsilon(1e-12));
  }
  CHECK(res.loss == doctest::Approx((0.7 * res.row_losses[0] + res.row_losses[1]) / 2));
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < out.logits.size(); ++k) {
    auto plus = out, minus = out;
    plus.logits.data()[k] += h;
    minus.logits.data()[k] -= h;
    softmax_into(plus);
    softmax_into(minus);
    const double num = (categorical_loss(plus, act, target, w).loss - categorical_loss(minus, act, target, w).loss) / (2 * h);
    CHECK(res.dlogits.data()[k] == doctest::Approx(num).epsilon(1e-6));
  }
}

TEST_CASE("double DQN selects with the online network") {
  const auto online = biased_net(3.0, -3.0);  // prefers action 0
  const auto target = biased_net(-3.0, 3.0);  // values action 1
  Matrix<double> next = Matrix<double>::Constant(1, 3, 0.5);
  nn::BatchOutput<double> tout;
  const auto a = double_next_action(next, 3, online, target, &tout);
  CHECK(a == std::vector<int>{0, 0, 0});
  // The target distribution at a* is what gets projected, and it favors the low atom.
  CHECK(tout.prob(0, 0, 0) > tout.prob(0, 0, 2));
  // With target == online the choice is the plain greedy action.
  const auto b = double_next_action(next, 3, target, target);
  CHECK(b == greedy_actions(target.evaluate(next, 3, NoiseMode::zero, NormMode::running), target.shape()));
  CHECK(b == std::vector<int>{1, 1, 1});
}

TEST_CASE("double DQN reduces to greedy when the networks coincide") {
  const auto s = toy_shape();
  nn::RainbowNetwork<double> net(s, 5);
  const auto batch = toy_batch(s, 6, 1, false);
  const auto a = double_next_action(batch.next_states, 6, net, net);
  const auto g = greedy_actions(net.evaluate(batch.next_states, 6, NoiseMode::zero, NormMode::running), s);
  CHECK(a == g);
}

TEST_CASE("update_step is deterministic given identical inputs") {
  const auto s = toy_shape();
  const auto cfg = toy_config();
  const auto batch = toy_batch(s, 8, 2, false);
  DualParams<double> d1(nn::RainbowNetwork<double>(s, 9));
  DualParams<double> d2 = d1;
  auto o1 = make_adam(d1.online.params());
  auto o2 = make_adam(d2.online.params());
  Rng r1(4), r2(4);
  const auto s1 = update_step(batch, d1, o1, cfg, r1);
  const auto s2 = update_step(batch, d2, o2, cfg, r2);
  CHECK(s1.row_losses == s2.row_losses);
  for (std::size_t k = 0; k < d1.online.params().size(); ++k) CHECK(d1.online.params()[k] == d2.online.params()[k]);
  CHECK(d1.updates_since_sync == 1);
  CHECK(d1.total_updates == 1);
  for (double l : s1.row_losses) CHECK(l >= 0.0);
  CHECK(s1.grad_norm > 0.0);
}

TEST_CASE("one repeated batch is overfit") {
  const auto s = toy_shape();
  auto cfg = toy_config();
  cfg.learning_rate = 1e-3;
  const auto batch = toy_batch(s, 8, 3, true);
  DualParams<double> dual(nn::RainbowNetwork<double>(s, 10));
  auto opt = make_adam(dual.online.params());
  Rng rng(1);
  const double first = update_step(batch, dual, opt, cfg, rng).loss;
  double last = first;
  for (int k = 1; k < 200; ++k) last = update_step(batch, dual, opt, cfg, rng).loss;
  MESSAGE("loss ", first, " -> ", last);
  CHECK(last <= 0.5 * first);
}

TEST_CASE("gradient clipping and Adam") {
  nn::ParameterSet<double> p;
  p.add("w", 2, 1, true);
  p.add("stat", 1, 1, false);
  p[0] << 1.0, -1.0;
  p[1] << 5.0;
  std::vector<Matrix<double>> g = p.zeros_like();
  g[0] << 30.0, 40.0;
  g[1] << 1000.0;
  const double norm = clip_gradients(g, p, 10.0);
  CHECK(norm == doctest::Approx(50.0));
  CHECK(g[0](0) == doctest::Approx(6.0));
  CHECK(g[0](1) == doctest::Approx(8.0));

  TrainConfig cfg;
  auto st = make_adam(p);
  adam_step(p, g, st, cfg);
  // First bias-corrected step moves by lr * g / (|g| + eps).
  CHECK(p[0](0) == doctest::Approx(1.0 - 1e-4 * 6.0 / (6.0 + 1.5e-4)).epsilon(1e-12));
  CHECK(p[0](1) == doctest::Approx(-1.0 - 1e-4 * 8.0 / (8.0 + 1.5e-4)).epsilon(1e-12));
  CHECK(p[1](0) == 5.0);  // non-trainable untouched
  CHECK(st.step == 1);
}

TEST_CASE("target synchronization cadence") {
  const auto s = toy_shape();
  TrainConfig cfg = toy_config();
  cfg.target_sync_interval = 1000;
  DualParams<double> dual(nn::RainbowNetwork<double>(s, 1));
  for (int u = 0; u < 3000; ++u) {
    ++dual.updates_since_sync;
    ++dual.total_updates;
    maybe_sync_target(dual, cfg);
  }
  CHECK(dual.syncs == 3);

  DualParams<double> d(nn::RainbowNetwork<double>(s, 2));
  d.online.params()[0].array() += 0.5;
  d.updates_since_sync = 999;
  CHECK_FALSE(maybe_sync_target(d, cfg));
  CHECK(d.syncs == 0);
  d.updates_since_sync = 1000;
  CHECK(maybe_sync_target(d, cfg));
  CHECK(d.updates_since_sync == 0);
  const auto x = toy_batch(s, 2, 7, false).states;
  CHECK(d.online.evaluate(x, 2, NoiseMode::zero, NormMode::running).probs ==
        d.target.evaluate(x, 2, NoiseMode::zero, NormMode::running).probs);
}

TEST_CASE("config json round trip and validation") {
  TrainConfig c;
  c.batch_size = 32;
  c.update_interval = 4;
  c.seed = 0xdeadbeefcafeULL;
  const auto back = config_from_json(config_to_json(c));
  CHECK(back.batch_size == 32);
  CHECK(back.update_interval == 4);
  CHECK(back.seed == c.seed);
  CHECK(back.network_shape() == c.network_shape());
  CHECK_THROWS(config_from_json(nlohmann::json{{"no_such_key", 1}}));
  TrainConfig bad;
  bad.v_min = 10;
  CHECK_THROWS(bad.validate());
  bad = TrainConfig{};
  bad.learning_start = bad.total_train_frames + 1;
  CHECK_THROWS(bad.validate());
  CHECK(c.per_beta(0) == doctest::Approx(0.4));
  CHECK(c.per_beta(c.total_train_frames) == doctest::Approx(1.0));
}
