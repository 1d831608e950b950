#include <doctest.h>

#include <random>

#include "evac/orca.hpp"
#include "oracles.hpp"

using namespace evac;
using namespace evac::orca;

namespace {

PedestrianState agent(int id, Vec2 p, Vec2 v, Vec2 pref = {}) {
  PedestrianState s;
  s.id = id;
  s.position = p;
  s.velocity = v;
  s.preferred_velocity = pref;
  return s;
}

Vec2 mirror_x(Vec2 v) { return {v.x, -v.y}; }

double min_pair_gap(const std::vector<PedestrianState>& peds) {
  double gap = INFINITY;
  for (std::size_t i = 0; i < peds.size(); ++i) {
    for (std::size_t j = i + 1; j < peds.size(); ++j) {
      gap = std::min(gap, distance(peds[i].position, peds[j].position) - peds[i].radius - peds[j].radius);
    }
  }
  return gap;
}

void advance(std::vector<PedestrianState>& peds) {
  for (auto& p : peds) {
    p.velocity = p.optimal_velocity;
    p.position += p.optimal_velocity;
  }
}

}  // namespace

TEST_CASE("no neighbors and no obstacles give no constraints") {
  const auto s = agent(0, {0, 0}, {1, 0});
  const auto c = compute_constraints(s, {}, ObstacleSet{}, OrcaParams{});
  CHECK(c.constraints.empty());
  CHECK(c.obstacle_count == 0);
}

TEST_CASE("solve_velocity examples") {
  CHECK(solve_velocity({}, {1, 0}, 2.0) == Vec2{1, 0});
  CHECK(solve_velocity({}, {5, 0}, 2.0) == Vec2{2, 0});
  const HalfPlaneConstraint floor{{0, 0}, {0, 1}};
  const Vec2 v = solve_velocity(std::span(&floor, 1), {1, -1}, 2.0);
  CHECK(v.x == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(v.y == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("solve_velocity returns a feasible preferred velocity unchanged") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<HalfPlaneConstraint> cs;
    const Vec2 pref{u(rng) * 0.5, u(rng) * 0.5};
    for (int k = 0; k < 4; ++k) {
      const Vec2 n = normalize(Vec2{u(rng), u(rng)});
      // Place the boundary behind `pref` so it stays feasible.
      cs.push_back({pref - n * (0.1 + std::fabs(u(rng))), n});
    }
    CHECK(solve_velocity(cs, pref, 2.5) == pref);
  }
}

TEST_CASE("solve_velocity stays in the speed disc and satisfies feasible constraints") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<HalfPlaneConstraint> cs;
    const int n = 1 + trial % 6;
    for (int k = 0; k < n; ++k) cs.push_back({{u(rng), u(rng)}, normalize(Vec2{u(rng), u(rng)})});
    const Vec2 pref{3 * u(rng), 3 * u(rng)};
    const Vec2 v = solve_velocity(cs, pref, 2.5);
    CHECK(norm(v) <= 2.5 + 1e-9);
    // If some point of a fine grid satisfies everything, the LP must too.
    bool feasible = false;
    for (double x = -2.5; x <= 2.5 && !feasible; x += 0.05) {
      for (double y = -2.5; y <= 2.5 && !feasible; y += 0.05) {
        const Vec2 c{x, y};
        if (norm(c) > 2.5) continue;
        feasible = std::all_of(cs.begin(), cs.end(), [&](const auto& h) { return h.satisfied_by(c); });
      }
    }
    if (feasible) {
      for (const auto& h : cs) CHECK(h.satisfied_by(v, 1e-7));
    }
  }
}

TEST_CASE("agent constraint matches the brute-force velocity obstacle") {
  const OrcaParams params;
  struct Case {
    Vec2 pa, va, pb, vb;
  };
  const Case cases[] = {
      {{0, 0}, {1.0, 0.1}, {12, 1.5}, {-1.0, 0.0}},     // converging, inside the VO
      {{0, 0}, {0.8, 0.6}, {9, 2.0}, {0.0, -0.5}},      // crossing
      {{0, 0}, {-1.0, 0.0}, {10, 3.0}, {1.0, 0.0}},     // diverging, outside the VO
      {{0, 0}, {0.3, 0.2}, {5, 1.0}, {0.0, 0.0}},       // cutoff circle region
  };
  for (const auto& c : cases) {
    const auto a = agent(0, c.pa, c.va);
    const auto b = agent(1, c.pb, c.vb);
    const auto cs = compute_constraints(a, std::span(&b, 1), ObstacleSet{}, params);
    REQUIRE(cs.constraints.size() == 1);
    const auto& h = cs.constraints[0];
    INFO("case pa=(", c.pa.x, ",", c.pa.y, ") va=(", c.va.x, ",", c.va.y, ") pb=(", c.pb.x, ",", c.pb.y, ")");
    INFO("point ", h.point.x, " ", h.point.y, " normal ", h.normal.x, " ", h.normal.y);
    CHECK(norm(h.normal) == doctest::Approx(1.0).epsilon(1e-9));

    const Vec2 rel_pos = c.pb - c.pa;
    const Vec2 rel_vel = c.va - c.vb;
    const double R = a.radius + b.radius;
    const Vec2 u = oracle::brute_force_u(rel_pos, rel_vel, R, params.time_horizon, 3.5, 0.003);
    const bool inside = oracle::in_velocity_obstacle(rel_pos, rel_vel, R, params.time_horizon);
    const Vec2 expected_point = c.va + 0.5 * u;
    const Vec2 expected_normal = inside ? normalize(u) : -normalize(u);
    INFO("oracle u ", u.x, " ", u.y, " inside ", inside);
    CHECK(distance(h.point, expected_point) < 0.01);
    CHECK(dot(h.normal, expected_normal) > 0.999);
  }
}

TEST_CASE("reciprocity: paired constraints split the correction in half") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  const OrcaParams params;
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = agent(0, {0, 0}, {2 * u(rng), 2 * u(rng)});
    const auto b = agent(1, {12 * u(rng) + 14, 12 * u(rng)}, {2 * u(rng), 2 * u(rng)});
    const auto ca = compute_constraints(a, std::span(&b, 1), ObstacleSet{}, params).constraints.at(0);
    const auto cb = compute_constraints(b, std::span(&a, 1), ObstacleSet{}, params).constraints.at(0);
    const Vec2 ua = ca.point - a.velocity;
    const Vec2 ub = cb.point - b.velocity;
    CHECK(ua.x == doctest::Approx(-ub.x).epsilon(1e-9));
    CHECK(ua.y == doctest::Approx(-ub.y).epsilon(1e-9));
    CHECK(dot(ca.normal, cb.normal) == doctest::Approx(-1.0).epsilon(1e-9));
  }
}

TEST_CASE("head-on pair: lateral avoidance with point-symmetric constraints") {
  const auto a = agent(0, {0, 0}, {2.5, 0});
  const auto b = agent(1, {20, 0}, {-2.5, 0});
  const OrcaParams params;
  const auto ca = compute_constraints(a, std::span(&b, 1), ObstacleSet{}, params).constraints.at(0);
  const auto cb = compute_constraints(b, std::span(&a, 1), ObstacleSet{}, params).constraints.at(0);
  CHECK(std::fabs(ca.normal.y) > 0.05);
  CHECK(std::fabs(cb.normal.y) > 0.05);
  // Rotating the scene by 180 degrees about the midpoint swaps the agents.
  CHECK(cb.normal.x == doctest::Approx(-ca.normal.x));
  CHECK(cb.normal.y == doctest::Approx(-ca.normal.y));
  CHECK(cb.point.x == doctest::Approx(-ca.point.x));
  CHECK(cb.point.y == doctest::Approx(-ca.point.y));
}

TEST_CASE("mirror equivariance on non-degenerate pairs") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PedestrianState> s = {
        agent(0, {0, 0}, {2 * u(rng), u(rng)}, {2 * u(rng), u(rng)}),
        agent(1, {10 + 4 * u(rng), 3 * u(rng)}, {-u(rng), u(rng)}, {-2 * u(rng), u(rng)})};
    auto m = s;
    for (auto& p : m) {
      p.position = mirror_x(p.position);
      p.velocity = mirror_x(p.velocity);
      p.preferred_velocity = mirror_x(p.preferred_velocity);
    }
    step_velocities_serial(s, ObstacleSet{}, OrcaParams{});
    step_velocities_serial(m, ObstacleSet{}, OrcaParams{});
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(m[i].optimal_velocity.x == doctest::Approx(s[i].optimal_velocity.x).epsilon(1e-6));
      CHECK(m[i].optimal_velocity.y == doctest::Approx(-s[i].optimal_velocity.y).epsilon(1e-6));
    }
  }
}

TEST_CASE("wall on the left: motion into the wall is forbidden, motion along it is not") {
  ObstacleSet walls;
  walls.add_rect({{-10, -50}, {0, 50}});  // solid slab for x < 0
  auto s = agent(0, {3.0, 0.0}, {0.0, 2.0}, {0.0, 2.5});
  const OrcaParams params;
  const auto cs = compute_constraints(s, {}, walls, params);
  REQUIRE(cs.obstacle_count >= 1);
  bool pushes_right = false;
  for (std::size_t k = 0; k < cs.obstacle_count; ++k) pushes_right |= cs.constraints[k].normal.x > 0.99;
  CHECK(pushes_right);

  auto allowed = [&](Vec2 v) {
    for (std::size_t k = 0; k < cs.obstacle_count; ++k) {
      if (!cs.constraints[k].satisfied_by(v)) return false;
    }
    return true;
  };
  CHECK(allowed({0.0, 2.5}));
  CHECK_FALSE(allowed({-2.5, 0.0}));
  // Soundness against a direct time-to-collision test with the wall face.
  for (double vx = -2.5; vx <= 2.5; vx += 0.05) {
    for (double vy = -2.5; vy <= 2.5; vy += 0.05) {
      const Vec2 v{vx, vy};
      if (norm(v) > 2.5 || !allowed(v)) continue;
      const double t = oracle::segment_contact_time(s.position, v, s.radius, {0, -50}, {0, 50},
                                                    params.obstacle_horizon);
      CHECK(t == INFINITY);
    }
  }
  const Vec2 v = solve_velocity(cs.constraints, s.preferred_velocity, s.max_speed, cs.obstacle_count);
  CHECK(v.x == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(v.y == doctest::Approx(2.5).epsilon(1e-9));
}

TEST_CASE("single pedestrian in an empty room keeps its preferred velocity") {
  std::vector<PedestrianState> peds = {agent(0, {50, 50}, {0, 0}, {1.2, -0.7})};
  ObstacleSet room;
  room.add_rect({{0, 0}, {2, 104}});
  step_velocities(peds, room, OrcaParams{});
  CHECK(peds[0].optimal_velocity == Vec2{1.2, -0.7});
}

TEST_CASE("inactive pedestrians are ignored") {
  std::vector<PedestrianState> peds = {agent(0, {0, 0}, {1, 0}, {2, 0}), agent(1, {5, 0}, {0, 0})};
  peds[1].active = false;
  step_velocities(peds, ObstacleSet{}, OrcaParams{});
  CHECK(peds[0].optimal_velocity == Vec2{2, 0});
}

TEST_CASE("head-on pair simulated for 200 frames never overlaps") {
  std::vector<PedestrianState> peds = {agent(0, {0, 0}, {2.5, 0}), agent(1, {20, 0}, {-2.5, 0})};
  double min_gap = INFINITY;
  for (int f = 0; f < 200; ++f) {
    peds[0].preferred_velocity = normalize(Vec2{40, 0} - peds[0].position) * 2.5;
    peds[1].preferred_velocity = normalize(Vec2{-20, 0} - peds[1].position) * 2.5;
    step_velocities(peds, ObstacleSet{}, OrcaParams{});
    for (const auto& p : peds) CHECK(norm(p.optimal_velocity) <= p.max_speed + 1e-9);
    advance(peds);
    min_gap = std::min(min_gap, min_pair_gap(peds));
  }
  CHECK(min_gap >= -1e-3);
  CHECK(peds[0].position.x > 20);  // they actually passed each other
}

TEST_CASE("overlapping discs are pushed apart without throwing") {
  std::vector<PedestrianState> peds = {agent(0, {0, 0}, {0, 0}, {1, 0}), agent(1, {3, 0}, {0, 0}, {-1, 0})};
  CHECK_NOTHROW(step_velocities(peds, ObstacleSet{}, OrcaParams{}));
  advance(peds);
  CHECK(distance(peds[0].position, peds[1].position) > 3.0);
  // Exactly coincident centers still resolve deterministically.
  std::vector<PedestrianState> same = {agent(0, {0, 0}, {0, 0}), agent(1, {0, 0}, {0, 0})};
  step_velocities(same, ObstacleSet{}, OrcaParams{});
  CHECK(same[0].optimal_velocity.x < 0);
  CHECK(same[1].optimal_velocity.x > 0);
}

TEST_CASE("parallel step matches the serial reference bitwise") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> pos(5, 95);
  std::uniform_real_distribution<double> vel(-2, 2);
  std::vector<PedestrianState> peds;
  for (int i = 0; i < 60; ++i) {
    const Vec2 p{pos(rng), pos(rng)};
    bool ok = true;
    for (const auto& q : peds) ok &= distance(q.position, p) > 4.2;
    if (ok) peds.push_back(agent(static_cast<int>(peds.size()), p, {vel(rng), vel(rng)}, {vel(rng), vel(rng)}));
  }
  ObstacleSet room;
  room.add_rect({{0, 0}, {100, 2}});
  room.add_rect({{0, 98}, {100, 100}});
  auto a = peds;
  auto b = peds;
  for (int f = 0; f < 20; ++f) {
    step_velocities(a, room, OrcaParams{});
    step_velocities_serial(b, room, OrcaParams{});
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i].optimal_velocity == b[i].optimal_velocity);
    }
    advance(a);
    advance(b);
  }
}

TEST_CASE("random crowds with random goals never interpenetrate") {
  for (std::uint64_t seed : {1, 2, 3}) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(3, 57);
    std::vector<PedestrianState> peds;
    std::vector<Vec2> goals;
    while (peds.size() < 30) {
      const Vec2 p{pos(rng), pos(rng)};
      bool ok = true;
      for (const auto& q : peds) ok &= distance(q.position, p) > 4.5;
      if (!ok) continue;
      peds.push_back(agent(static_cast<int>(peds.size()), p, {}));
      goals.push_back({pos(rng), pos(rng)});
    }
    ObstacleSet room;
    room.add_rect({{-2, -2}, {62, 0}});
    room.add_rect({{-2, 60}, {62, 62}});
    room.add_rect({{-2, 0}, {0, 60}});
    room.add_rect({{60, 0}, {62, 60}});
    double min_gap = INFINITY;
    double moved = 0;
    for (int f = 0; f < 200; ++f) {
      for (std::size_t i = 0; i < peds.size(); ++i) {
        if (distance(peds[i].position, goals[i]) < 3) goals[i] = {pos(rng), pos(rng)};
        peds[i].preferred_velocity = normalize(goals[i] - peds[i].position) * 2.5;
      }
      step_velocities(peds, room, OrcaParams{});
      for (const auto& p : peds) {
        REQUIRE(norm(p.optimal_velocity) <= p.max_speed + 1e-9);
        moved += norm(p.optimal_velocity);
      }
      advance(peds);
      min_gap = std::min(min_gap, min_pair_gap(peds));
      for (const auto& p : peds) {
        REQUIRE(p.position.x >= p.radius - 1e-3);
        REQUIRE(p.position.y >= p.radius - 1e-3);
        REQUIRE(p.position.x <= 60 - p.radius + 1e-3);
        REQUIRE(p.position.y <= 60 - p.radius + 1e-3);
      }
    }
    CHECK(min_gap >= -2e-3);
    CHECK(moved / (200.0 * 30) > 0.5);  // the crowd keeps moving
  }
}

TEST_CASE("touching pairs that approach are held, separating pairs move") {
  std::vector<PedestrianState> peds = {agent(0, {0, 0}, {0, 0}), agent(1, {4, 0}, {0, 0})};
  peds[0].preferred_velocity = {2.5, 0};
  peds[1].preferred_velocity = {-2.5, 0};
  step_velocities(peds, ObstacleSet{}, OrcaParams{});
  advance(peds);
  CHECK(distance(peds[0].position, peds[1].position) >= 4.0 - 1e-9);

  std::vector<PedestrianState> apart = {agent(0, {0, 0}, {0, 0}), agent(1, {4, 0}, {0, 0})};
  apart[0].preferred_velocity = {-2.5, 0};
  apart[1].preferred_velocity = {2.5, 0};
  step_velocities(apart, ObstacleSet{}, OrcaParams{});
  CHECK(apart[0].optimal_velocity == Vec2{-2.5, 0});
  CHECK(apart[1].optimal_velocity == Vec2{2.5, 0});
}
