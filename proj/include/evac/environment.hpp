#pragma once

#include <array>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "evac/orca.hpp"
#include "evac/scenario.hpp"

namespace evac::env {

inline constexpr int kNumActions = 8;

/// Unit direction for action k: angle k * 45 degrees counter-clockwise from +x.
Vec2 action_direction(int action);

/// Preferred velocity for `action` at the pedestrian's max speed.
Vec2 apply_action(const orca::PedestrianState& ped, int action);

/// True once the exit is open and the center has reached the exit's outer
/// wall line inside the gap.
bool is_evacuated(const orca::PedestrianState& ped, const ExitSpec& exit, int frame);

struct SimulationState {
  int frame = 0;
  std::vector<orca::PedestrianState> pedestrians;  // index == id
  std::vector<int> evacuated_through;              // exit index, -1 while inside
  std::vector<int> per_exit_evacuee_counts;        // [N_l, N_b]

  int active_count() const;
  bool all_evacuated() const { return active_count() == 0; }
};

enum class EventKind { moved, evacuated, truncated };

struct PedestrianEvent {
  int ped_id;
  EventKind kind;
  int exit_index = -1;  // set for evacuated
};

struct StepResult {
  SimulationState state;
  std::vector<PedestrianEvent> events;
};

/// World owner for one scenario: geometry, obstacle sets, and the transition.
class Environment {
 public:
  explicit Environment(RoomScenario scenario, orca::OrcaParams orca_params = {});

  const RoomScenario& scenario() const { return *scenario_; }
  const orca::OrcaParams& orca_params() const { return orca_params_; }

  /// Frame-0 state with pedestrians at the scenario spawn positions.
  SimulationState reset() const;

  /// Obstacles in force at `frame` (closed exits are solid).
  const orca::ObstacleSet& obstacles_at(int frame) const;

  /// Advances one frame. `actions` is indexed by pedestrian id and must hold
  /// a valid action for every active pedestrian.
  StepResult step(const SimulationState& state, std::span<const int> actions) const;

  /// Same as step but keyed by id.
  StepResult step(const SimulationState& state, const std::map<int, int>& actions) const;

 private:
  std::shared_ptr<const RoomScenario> scenario_;
  orca::OrcaParams orca_params_;
  // One obstacle set per open-exit mask.
  std::map<unsigned, orca::ObstacleSet> obstacle_cache_;
};

/// Free-function form of Environment::step.
inline StepResult world_step(const Environment& env, const SimulationState& state,
                             std::span<const int> actions) {
  return env.step(state, actions);
}

}  // namespace evac::env
