#include "evac/environment.hpp"

#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace evac::env {

Vec2 action_direction(int action) {
  static constexpr double s = 0.70710678118654752440;
  static constexpr std::array<Vec2, kNumActions> kDirections = {
      Vec2{1.0, 0.0}, Vec2{s, s},   Vec2{0.0, 1.0},  Vec2{-s, s},
      Vec2{-1.0, 0.0}, Vec2{-s, -s}, Vec2{0.0, -1.0}, Vec2{s, -s}};
  if (action < 0 || action >= kNumActions) {
    throw std::out_of_range("action index out of range: " + std::to_string(action));
  }
  return kDirections[static_cast<std::size_t>(action)];
}

Vec2 apply_action(const orca::PedestrianState& ped, int action) {
  return action_direction(action) * ped.max_speed;
}

bool is_evacuated(const orca::PedestrianState& ped, const ExitSpec& exit, int frame) {
  if (!exit.is_open(frame)) return false;
  const double h = exit.width / 2.0;
  const Vec2 p = ped.position;
  switch (exit.wall_side) {
    case WallSide::left: return p.x <= exit.center.x && std::fabs(p.y - exit.center.y) <= h;
    case WallSide::right: return p.x >= exit.center.x && std::fabs(p.y - exit.center.y) <= h;
    case WallSide::bottom: return p.y <= exit.center.y && std::fabs(p.x - exit.center.x) <= h;
    case WallSide::top: return p.y >= exit.center.y && std::fabs(p.x - exit.center.x) <= h;
  }
  return false;
}

int SimulationState::active_count() const {
  int n = 0;
  for (const auto& p : pedestrians) n += p.active ? 1 : 0;
  return n;
}

Environment::Environment(RoomScenario scenario, orca::OrcaParams orca_params)
    : scenario_(std::make_shared<const RoomScenario>(std::move(scenario))),
      orca_params_(orca_params) {
  std::set<int> frames{0};
  for (const auto& e : scenario_->exits) frames.insert(e.open_frame);
  for (int f : frames) {
    const unsigned mask = scenario_->open_mask(f);
    if (obstacle_cache_.contains(mask)) continue;
    orca::ObstacleSet set;
    for (const Rect& r : scenario_->wall_rects(f)) set.add_rect(r);
    obstacle_cache_.emplace(mask, std::move(set));
  }
}

const orca::ObstacleSet& Environment::obstacles_at(int frame) const {
  return obstacle_cache_.at(scenario_->open_mask(frame));
}

SimulationState Environment::reset() const {
  const RoomScenario& sc = *scenario_;
  SimulationState s;
  s.frame = 0;
  s.per_exit_evacuee_counts.assign(sc.exits.size(), 0);
  for (std::size_t i = 0; i < sc.spawn_positions.size(); ++i) {
    orca::PedestrianState p;
    p.id = static_cast<int>(i);
    p.position = sc.spawn_positions[i];
    p.radius = sc.radius();
    p.max_speed = sc.params.max_speed;
    p.active = true;
    s.pedestrians.push_back(p);
  }
  s.evacuated_through.assign(s.pedestrians.size(), -1);
  return s;
}

StepResult Environment::step(const SimulationState& state, std::span<const int> actions) const {
  const RoomScenario& sc = *scenario_;
  if (state.frame >= sc.horizon()) throw std::logic_error("step called at or past the horizon");
  if (actions.size() < state.pedestrians.size() && state.active_count() > 0) {
    bool missing = false;
    for (std::size_t i = actions.size(); i < state.pedestrians.size(); ++i) {
      missing = missing || state.pedestrians[i].active;
    }
    if (missing) throw std::invalid_argument("missing action for an active pedestrian");
  }

  StepResult out;
  out.state = state;
  auto& peds = out.state.pedestrians;
  for (std::size_t i = 0; i < peds.size(); ++i) {
    if (!peds[i].active) continue;
    peds[i].preferred_velocity = apply_action(peds[i], actions[i]);
  }

  orca::step_velocities(peds, obstacles_at(state.frame), orca_params_);

  const int next_frame = state.frame + 1;
  for (std::size_t i = 0; i < peds.size(); ++i) {
    auto& p = peds[i];
    if (!p.active) continue;
    p.velocity = p.optimal_velocity;
    p.position += p.optimal_velocity * orca_params_.time_step;

    int through = -1;
    for (std::size_t e = 0; e < sc.exits.size() && through < 0; ++e) {
      if (is_evacuated(p, sc.exits[e], state.frame)) through = static_cast<int>(e);
    }
    if (through >= 0) {
      p.active = false;
      out.state.evacuated_through[i] = through;
      ++out.state.per_exit_evacuee_counts[static_cast<std::size_t>(through)];
      out.events.push_back({p.id, EventKind::evacuated, through});
    } else if (next_frame >= sc.horizon()) {
      out.events.push_back({p.id, EventKind::truncated});
    } else {
      out.events.push_back({p.id, EventKind::moved});
    }
  }
  out.state.frame = next_frame;
  return out;
}

StepResult Environment::step(const SimulationState& state, const std::map<int, int>& actions) const {
  std::vector<int> dense(state.pedestrians.size(), -1);
  for (std::size_t i = 0; i < state.pedestrians.size(); ++i) {
    if (!state.pedestrians[i].active) continue;
    const auto it = actions.find(state.pedestrians[i].id);
    if (it == actions.end()) throw std::invalid_argument("missing action for an active pedestrian");
    dense[i] = it->second;
  }
  return step(state, std::span<const int>(dense));
}

}  // namespace evac::env
