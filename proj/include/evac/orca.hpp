#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "evac/geometry.hpp"

namespace evac::orca {

/// One disc pedestrian. Speeds are in units per frame.
struct PedestrianState {
  int id = 0;
  Vec2 position;
  Vec2 velocity;
  Vec2 optimal_velocity;
  Vec2 preferred_velocity;
  double radius = 2.0;
  double max_speed = 2.5;
  bool active = true;
};

/// Velocity-space half-plane {v : dot(v - point, normal) >= 0}.
struct HalfPlaneConstraint {
  Vec2 point;
  Vec2 normal;

  /// Boundary direction with the feasible side on its left.
  Vec2 direction() const { return {normal.y, -normal.x}; }
  bool satisfied_by(const Vec2& v, double tol = 0.0) const { return dot(v - point, normal) >= -tol; }
};

/// Directed edge of an obstacle polygon; polygons wind counter-clockwise so
/// the blocked interior lies to the left of endpoint_a -> endpoint_b.
struct ObstacleSegment {
  Vec2 endpoint_a;
  Vec2 endpoint_b;
  bool counter_clockwise = true;
  bool convex_a = true;  // convexity of the polygon at endpoint_a
  std::size_t prev = 0;  // index of the edge ending at endpoint_a
  std::size_t next = 0;  // index of the edge starting at endpoint_b

  Vec2 unit_direction() const { return normalize(endpoint_b - endpoint_a); }
};

/// Closed obstacle polygons stored as linked edges.
class ObstacleSet {
 public:
  /// Adds a closed polygon given by its vertices in counter-clockwise order.
  /// Two vertices describe a double-sided segment.
  void add_polygon(std::span<const Vec2> vertices);
  void add_rect(const Rect& r);

  const std::vector<ObstacleSegment>& segments() const { return segments_; }
  std::size_t size() const { return segments_.size(); }
  bool empty() const { return segments_.empty(); }

 private:
  std::vector<ObstacleSegment> segments_;
};

struct OrcaParams {
  double time_horizon = 10.0;           // frames, agent-agent
  double obstacle_horizon = 5.0;        // frames, agent-obstacle
  double neighbor_distance_factor = 15.0;  // cutoff = factor * radius
  std::size_t max_neighbors = 10;
  double time_step = 1.0;
};

/// Constraints for one pedestrian. The first `obstacle_count` entries come from
/// obstacles and are never relaxed by the fallback program.
struct ConstraintSet {
  std::vector<HalfPlaneConstraint> constraints;
  std::size_t obstacle_count = 0;
};

/// Builds the half-planes for `subject` against the given neighbors (nearest
/// `max_neighbors` within the cutoff, processed by ascending id) and against
/// obstacle edges within reach.
ConstraintSet compute_constraints(const PedestrianState& subject,
                                  std::span<const PedestrianState> neighbors,
                                  const ObstacleSet& obstacles,
                                  const OrcaParams& params);

/// Velocity closest to `preferred` inside every half-plane and the speed disc.
/// When infeasible, minimizes the largest violation of the non-obstacle
/// constraints while keeping the first `obstacle_count` constraints hard.
Vec2 solve_velocity(std::span<const HalfPlaneConstraint> constraints, Vec2 preferred,
                    double max_speed, std::size_t obstacle_count = 0);

/// Sets `optimal_velocity` for every active pedestrian from one immutable
/// snapshot of `peds`. Each solve uses the horizon-tau lines of
/// compute_constraints plus one- and three-step lines; when the set is
/// infeasible the shorter horizons stay hard. A final pass scales back pairs
/// that would still touch within the step. Uses OpenMP across pedestrians.
void step_velocities(std::span<PedestrianState> peds, const ObstacleSet& obstacles,
                     const OrcaParams& params);

/// Single-threaded reference of step_velocities; results are bitwise equal.
void step_velocities_serial(std::span<PedestrianState> peds, const ObstacleSet& obstacles,
                            const OrcaParams& params);

}  // namespace evac::orca
