#include "evac/orca.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace evac::orca {
namespace {

constexpr double kEpsilon = 1e-9;

struct Line {
  Vec2 point;
  Vec2 direction;  // feasible side on the left
};

Line to_line(const HalfPlaneConstraint& c) { return {c.point, c.direction()}; }

HalfPlaneConstraint to_constraint(const Line& l) { return {l.point, perp(l.direction)}; }

// Optimizes along line `line_no` subject to lines [0, line_no) and the disc.
bool linear_program1(std::span<const Line> lines, std::size_t line_no, double radius,
                     const Vec2& opt_velocity, bool direction_opt, Vec2& result) {
  const Line& line = lines[line_no];
  const double dot_product = dot(line.point, line.direction);
  const double discriminant = dot_product * dot_product + radius * radius - abs_sq(line.point);

  if (discriminant < 0.0) {
    return false;  // speed disc misses the line entirely
  }

  const double sqrt_disc = std::sqrt(discriminant);
  double t_left = -dot_product - sqrt_disc;
  double t_right = -dot_product + sqrt_disc;

  for (std::size_t i = 0; i < line_no; ++i) {
    const double denominator = det(line.direction, lines[i].direction);
    const double numerator = det(lines[i].direction, line.point - lines[i].point);

    if (std::fabs(denominator) <= kEpsilon) {
      if (numerator < 0.0) return false;  // parallel and infeasible
      continue;
    }

    const double t = numerator / denominator;
    if (denominator >= 0.0) {
      t_right = std::min(t_right, t);
    } else {
      t_left = std::max(t_left, t);
    }
    if (t_left > t_right) return false;
  }

  if (direction_opt) {
    result = dot(opt_velocity, line.direction) > 0.0 ? line.point + t_right * line.direction
                                                     : line.point + t_left * line.direction;
  } else {
    const double t = dot(line.direction, opt_velocity - line.point);
    if (t < t_left) {
      result = line.point + t_left * line.direction;
    } else if (t > t_right) {
      result = line.point + t_right * line.direction;
    } else {
      result = line.point + t * line.direction;
    }
  }
  return true;
}

// Returns the index of the first line it fails on, or lines.size() on success.
std::size_t linear_program2(std::span<const Line> lines, double radius, const Vec2& opt_velocity,
                            bool direction_opt, Vec2& result) {
  if (direction_opt) {
    result = opt_velocity * radius;
  } else if (abs_sq(opt_velocity) > radius * radius) {
    result = normalize(opt_velocity) * radius;
  } else {
    result = opt_velocity;
  }

  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (det(lines[i].direction, lines[i].point - result) > 0.0) {
      const Vec2 previous = result;
      if (!linear_program1(lines, i, radius, opt_velocity, direction_opt, result)) {
        result = previous;
        return i;
      }
    }
  }
  return lines.size();
}

// Minimizes the maximum violation of lines [obstacle_count, end) starting
// from the line where linear_program2 failed.
void linear_program3(std::span<const Line> lines, std::size_t obstacle_count,
                     std::size_t begin_line, double radius, Vec2& result) {
  double distance = 0.0;
  std::vector<Line> projected;

  for (std::size_t i = begin_line; i < lines.size(); ++i) {
    if (det(lines[i].direction, lines[i].point - result) <= distance) continue;

    projected.assign(lines.begin(), lines.begin() + static_cast<std::ptrdiff_t>(obstacle_count));

    for (std::size_t j = obstacle_count; j < i; ++j) {
      Line line;
      const double determinant = det(lines[i].direction, lines[j].direction);

      if (std::fabs(determinant) <= kEpsilon) {
        if (dot(lines[i].direction, lines[j].direction) > 0.0) continue;  // same direction
        line.point = 0.5 * (lines[i].point + lines[j].point);
      } else {
        line.point = lines[i].point +
                     (det(lines[j].direction, lines[i].point - lines[j].point) / determinant) *
                         lines[i].direction;
      }
      line.direction = normalize(lines[j].direction - lines[i].direction);
      projected.push_back(line);
    }

    const Vec2 previous = result;
    if (linear_program2(projected, radius, Vec2{-lines[i].direction.y, lines[i].direction.x},
                        true, result) < projected.size()) {
      // Only reachable through rounding; the previous result is already feasible.
      result = previous;
    }
    distance = det(lines[i].direction, lines[i].point - result);
  }
}

struct ObstacleNeighbor {
  double dist_sq;
  std::size_t index;
};

std::vector<ObstacleNeighbor> obstacle_neighbors(const PedestrianState& subject,
                                                 const ObstacleSet& obstacles,
                                                 const OrcaParams& params) {
  std::vector<ObstacleNeighbor> out;
  const double range = params.obstacle_horizon * subject.max_speed + subject.radius;
  const double range_sq = range * range;
  const auto& segs = obstacles.segments();
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& s = segs[i];
    // Only edges whose outer face is visible from the subject.
    if (det(s.endpoint_b - s.endpoint_a, subject.position - s.endpoint_a) >= 0.0) continue;
    const double d = dist_sq_point_segment(s.endpoint_a, s.endpoint_b, subject.position);
    if (d < range_sq) out.push_back({d, i});
  }
  std::sort(out.begin(), out.end(), [](const ObstacleNeighbor& a, const ObstacleNeighbor& b) {
    return a.dist_sq != b.dist_sq ? a.dist_sq < b.dist_sq : a.index < b.index;
  });
  return out;
}

void add_obstacle_lines(const PedestrianState& subject, const ObstacleSet& obstacles,
                        const OrcaParams& params, std::vector<Line>& lines) {
  const auto& segs = obstacles.segments();
  const double inv_tau = 1.0 / params.obstacle_horizon;
  const double radius = subject.radius;
  const double radius_sq = radius * radius;
  const Vec2 position = subject.position;
  const Vec2 velocity = subject.velocity;

  for (const auto& nb : obstacle_neighbors(subject, obstacles, params)) {
    // Vertex 1 is the start of this edge, vertex 2 the start of the next edge.
    std::size_t edge1 = nb.index;
    std::size_t edge2 = segs[edge1].next;
    auto vpoint = [&](std::size_t e) { return segs[e].endpoint_a; };
    auto vdir = [&](std::size_t e) { return segs[e].unit_direction(); };
    auto vconvex = [&](std::size_t e) { return segs[e].convex_a; };

    const Vec2 rel1 = vpoint(edge1) - position;
    const Vec2 rel2 = vpoint(edge2) - position;

    bool covered = false;
    for (const auto& l : lines) {
      if (det(inv_tau * rel1 - l.point, l.direction) - inv_tau * radius >= -kEpsilon &&
          det(inv_tau * rel2 - l.point, l.direction) - inv_tau * radius >= -kEpsilon) {
        covered = true;
        break;
      }
    }
    if (covered) continue;

    const double dist_sq1 = abs_sq(rel1);
    const double dist_sq2 = abs_sq(rel2);
    const Vec2 obstacle_vector = vpoint(edge2) - vpoint(edge1);
    const double s = dot(-rel1, obstacle_vector) / abs_sq(obstacle_vector);
    const double dist_sq_line = abs_sq(-rel1 - s * obstacle_vector);

    Line line;

    if (s < 0.0 && dist_sq1 <= radius_sq) {
      if (vconvex(edge1)) {
        line.point = Vec2{};
        line.direction = normalize(Vec2{-rel1.y, rel1.x});
        lines.push_back(line);
      }
      continue;
    }
    if (s > 1.0 && dist_sq2 <= radius_sq) {
      if (vconvex(edge2) && det(rel2, vdir(edge2)) >= 0.0) {
        line.point = Vec2{};
        line.direction = normalize(Vec2{-rel2.y, rel2.x});
        lines.push_back(line);
      }
      continue;
    }
    if (s >= 0.0 && s <= 1.0 && dist_sq_line <= radius_sq) {
      line.point = Vec2{};
      line.direction = -vdir(edge1);
      lines.push_back(line);
      continue;
    }

    Vec2 left_leg;
    Vec2 right_leg;
    auto left_tangent = [&](const Vec2& rel, double dsq) {
      const double leg = std::sqrt(dsq - radius_sq);
      return Vec2{rel.x * leg - rel.y * radius, rel.x * radius + rel.y * leg} / dsq;
    };
    auto right_tangent = [&](const Vec2& rel, double dsq) {
      const double leg = std::sqrt(dsq - radius_sq);
      return Vec2{rel.x * leg + rel.y * radius, -rel.x * radius + rel.y * leg} / dsq;
    };

    if (s < 0.0 && dist_sq_line <= radius_sq) {
      // Viewed obliquely: vertex 1 alone defines the obstacle.
      if (!vconvex(edge1)) continue;
      edge2 = edge1;
      left_leg = left_tangent(rel1, dist_sq1);
      right_leg = right_tangent(rel1, dist_sq1);
    } else if (s > 1.0 && dist_sq_line <= radius_sq) {
      if (!vconvex(edge2)) continue;
      edge1 = edge2;
      left_leg = left_tangent(rel2, dist_sq2);
      right_leg = right_tangent(rel2, dist_sq2);
    } else {
      left_leg = vconvex(edge1) ? left_tangent(rel1, dist_sq1) : -vdir(edge1);
      right_leg = vconvex(edge2) ? right_tangent(rel2, dist_sq2) : vdir(edge1);
    }

    // Legs may not point into the neighboring edge of a convex vertex.
    const std::size_t left_neighbor = segs[edge1].prev;
    bool left_foreign = false;
    bool right_foreign = false;
    if (vconvex(edge1) && det(left_leg, -vdir(left_neighbor)) >= 0.0) {
      left_leg = -vdir(left_neighbor);
      left_foreign = true;
    }
    if (vconvex(edge2) && det(right_leg, vdir(edge2)) <= 0.0) {
      right_leg = vdir(edge2);
      right_foreign = true;
    }

    const Vec2 left_cutoff = inv_tau * (vpoint(edge1) - position);
    const Vec2 right_cutoff = inv_tau * (vpoint(edge2) - position);
    const Vec2 cutoff_vector = right_cutoff - left_cutoff;
    const bool single_vertex = edge1 == edge2;

    const double t =
        single_vertex ? 0.5 : dot(velocity - left_cutoff, cutoff_vector) / abs_sq(cutoff_vector);
    const double t_left = dot(velocity - left_cutoff, left_leg);
    const double t_right = dot(velocity - right_cutoff, right_leg);

    if ((t < 0.0 && t_left < 0.0) || (single_vertex && t_left < 0.0 && t_right < 0.0)) {
      const Vec2 unit_w = normalize(velocity - left_cutoff);
      line.direction = Vec2{unit_w.y, -unit_w.x};
      line.point = left_cutoff + radius * inv_tau * unit_w;
      lines.push_back(line);
      continue;
    }
    if (t > 1.0 && t_right < 0.0) {
      const Vec2 unit_w = normalize(velocity - right_cutoff);
      line.direction = Vec2{unit_w.y, -unit_w.x};
      line.point = right_cutoff + radius * inv_tau * unit_w;
      lines.push_back(line);
      continue;
    }

    constexpr double inf = std::numeric_limits<double>::infinity();
    const double dist_sq_cutoff = (t < 0.0 || t > 1.0 || single_vertex)
                                      ? inf
                                      : abs_sq(velocity - (left_cutoff + t * cutoff_vector));
    const double dist_sq_left =
        t_left < 0.0 ? inf : abs_sq(velocity - (left_cutoff + t_left * left_leg));
    const double dist_sq_right =
        t_right < 0.0 ? inf : abs_sq(velocity - (right_cutoff + t_right * right_leg));

    if (dist_sq_cutoff <= dist_sq_left && dist_sq_cutoff <= dist_sq_right) {
      line.direction = -vdir(edge1);
      line.point = left_cutoff + radius * inv_tau * perp(line.direction);
      lines.push_back(line);
      continue;
    }
    if (dist_sq_left <= dist_sq_right) {
      if (left_foreign) continue;
      line.direction = left_leg;
      line.point = left_cutoff + radius * inv_tau * perp(line.direction);
      lines.push_back(line);
      continue;
    }
    if (right_foreign) continue;
    line.direction = -right_leg;
    line.point = right_cutoff + radius * inv_tau * perp(line.direction);
    lines.push_back(line);
  }
}

Line agent_line(const PedestrianState& self, const PedestrianState& other,
                const OrcaParams& params) {
  const Vec2 rel_pos = other.position - self.position;
  const Vec2 rel_vel = self.velocity - other.velocity;
  const double dist_sq = abs_sq(rel_pos);
  const double combined = self.radius + other.radius;
  const double combined_sq = combined * combined;
  const double inv_tau = 1.0 / params.time_horizon;

  Line line;
  Vec2 u;

  if (dist_sq > combined_sq) {
    const Vec2 w = rel_vel - inv_tau * rel_pos;  // from cutoff center to relative velocity
    const double w_len_sq = abs_sq(w);
    const double dot_product = dot(w, rel_pos);

    if (dot_product < 0.0 && dot_product * dot_product > combined_sq * w_len_sq) {
      const double w_len = std::sqrt(w_len_sq);
      const Vec2 unit_w = w / w_len;
      line.direction = Vec2{unit_w.y, -unit_w.x};
      u = (combined * inv_tau - w_len) * unit_w;
    } else {
      const double leg = std::sqrt(dist_sq - combined_sq);
      if (det(rel_pos, w) > 0.0) {
        line.direction = Vec2{rel_pos.x * leg - rel_pos.y * combined,
                              rel_pos.x * combined + rel_pos.y * leg} /
                         dist_sq;
      } else {
        line.direction = -Vec2{rel_pos.x * leg + rel_pos.y * combined,
                               -rel_pos.x * combined + rel_pos.y * leg} /
                         dist_sq;
      }
      u = dot(rel_vel, line.direction) * line.direction - rel_vel;
    }
  } else {
    // Overlapping: push apart within one time step.
    const double inv_dt = 1.0 / params.time_step;
    const Vec2 w = rel_vel - inv_dt * rel_pos;
    const double w_len = norm(w);
    Vec2 unit_w;
    if (w_len > kEpsilon) {
      unit_w = w / w_len;
    } else if (dist_sq > 0.0) {
      unit_w = normalize(-rel_pos);
    } else {
      unit_w = self.id < other.id ? Vec2{-1.0, 0.0} : Vec2{1.0, 0.0};
    }
    line.direction = Vec2{unit_w.y, -unit_w.x};
    u = (combined * inv_dt - w_len) * unit_w;
  }

  line.point = self.velocity + 0.5 * u;
  return line;
}

Vec2 solve_lines(std::span<const Line> lines, std::size_t obstacle_count, const Vec2& preferred,
                 double max_speed) {
  Vec2 result;
  const std::size_t fail = linear_program2(lines, max_speed, preferred, false, result);
  if (fail < lines.size()) {
    linear_program3(lines, obstacle_count, fail, max_speed, result);
  }
  // Rounding can leave the result a hair outside the disc.
  const double speed = norm(result);
  if (speed > max_speed) result = result * (max_speed / speed);
  return result;
}

// Agent lines at growing horizons, shortest first. When the full set is
// infeasible the shorter horizons stay hard and only the first tier that
// cannot be met is relaxed by the fallback program, so close pairs keep their
// one-step guarantee ahead of far-future avoidance.
Vec2 solve_tiered(const PedestrianState& self, std::span<const PedestrianState> snapshot,
                  std::span<const std::pair<double, std::size_t>> near, std::vector<Line> lines,
                  const OrcaParams& params) {
  const std::size_t obstacle_count = lines.size();
  std::vector<double> horizons;
  for (double h : {params.time_step, 3.0 * params.time_step}) {
    if (h < params.time_horizon) horizons.push_back(h);
  }
  horizons.push_back(params.time_horizon);
  std::vector<std::size_t> tier_end;
  for (double h : horizons) {
    OrcaParams p = params;
    p.time_horizon = h;
    for (const auto& [d, j] : near) lines.push_back(agent_line(self, snapshot[j], p));
    tier_end.push_back(lines.size());
  }

  Vec2 result;
  if (linear_program2(lines, self.max_speed, self.preferred_velocity, false, result) == lines.size()) {
    return result;
  }
  for (std::size_t k = horizons.size(); k-- > 1;) {
    const std::span<const Line> hard(lines.data(), tier_end[k - 1]);
    if (linear_program2(hard, self.max_speed, self.preferred_velocity, false, result) < hard.size()) continue;
    return solve_lines(std::span<const Line>(lines.data(), tier_end[k]), hard.size(), self.preferred_velocity,
                       self.max_speed);
  }
  return solve_lines(std::span<const Line>(lines.data(), tier_end[0]), obstacle_count, self.preferred_velocity,
                     self.max_speed);
}

Vec2 optimal_velocity_for(std::size_t index, std::span<const PedestrianState> snapshot,
                          const ObstacleSet& obstacles, const OrcaParams& params) {
  const PedestrianState& self = snapshot[index];
  std::vector<Line> lines;
  add_obstacle_lines(self, obstacles, params, lines);

  const double cutoff = params.neighbor_distance_factor * self.radius;
  const double cutoff_sq = cutoff * cutoff;
  std::vector<std::pair<double, std::size_t>> near;
  for (std::size_t j = 0; j < snapshot.size(); ++j) {
    if (j == index || !snapshot[j].active) continue;
    const double d = abs_sq(snapshot[j].position - self.position);
    if (d < cutoff_sq) near.emplace_back(d, j);
  }
  auto by_distance = [&](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : snapshot[a.second].id < snapshot[b.second].id;
  };
  if (near.size() > params.max_neighbors) {
    std::partial_sort(near.begin(), near.begin() + static_cast<std::ptrdiff_t>(params.max_neighbors),
                      near.end(), by_distance);
    near.resize(params.max_neighbors);
  }
  std::sort(near.begin(), near.end(), [&](const auto& a, const auto& b) {
    return snapshot[a.second].id < snapshot[b.second].id;
  });
  return solve_tiered(self, snapshot, near, lines, params);
}

// Fraction of the step at which two discs moving with v_i, v_j first touch;
// 1 when they stay apart. Touching or overlapping pairs may slide or separate
// but not close in further than a hair below their current distance.
double contact_fraction(const PedestrianState& a, Vec2 va, const PedestrianState& b, Vec2 vb) {
  const Vec2 d = b.position - a.position;
  const Vec2 w = vb - va;
  const double combined = a.radius + b.radius;
  const double r = std::min(combined, norm(d)) - 1e-9 * combined;
  const double bq = dot(d, w);
  const double aq = abs_sq(w);
  if (bq >= 0.0 || aq <= 0.0) return 1.0;
  if (r <= 0.0) return 0.0;
  const double c = abs_sq(d) - r * r;
  const double disc = bq * bq - aq * c;
  if (disc < 0.0) return 1.0;
  const double t = (-bq - std::sqrt(disc)) / aq;
  return t < 1.0 ? std::max(t, 0.0) : 1.0;
}

// Scales velocities of pairs that would touch within the step until no pair
// does. The reciprocal LP can be infeasible in tight spots, and its fallback
// only bounds the violation. Scales only shrink, so the loop ends; pairs left
// after the round limit stop.
void contact_guard(std::span<PedestrianState> peds, bool parallel) {
  const auto n = static_cast<std::ptrdiff_t>(peds.size());
  std::vector<double> scale(peds.size(), 1.0), next(peds.size());
  auto vel = [&](std::ptrdiff_t i) { return peds[i].optimal_velocity * scale[i]; };
  auto round = [&](std::ptrdiff_t i) {
    next[i] = scale[i];
    if (!peds[i].active || scale[i] == 0.0) return;
    for (std::ptrdiff_t j = 0; j < n; ++j) {
      if (j == i || !peds[j].active) continue;
      const double t = contact_fraction(peds[i], vel(i), peds[j], vel(j));
      if (t < 1.0) next[i] = std::min(next[i], scale[i] * t);
    }
  };
  for (int iter = 0; iter < 64; ++iter) {
    if (parallel) {
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t i = 0; i < n; ++i) round(i);
    } else {
      for (std::ptrdiff_t i = 0; i < n; ++i) round(i);
    }
    if (next == scale) break;
    if (iter == 63) {
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        if (next[i] != scale[i]) next[i] = 0.0;
      }
    }
    scale.swap(next);
  }
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (scale[i] != 1.0) peds[i].optimal_velocity = peds[i].optimal_velocity * scale[i];
  }
}

}  // namespace

void ObstacleSet::add_polygon(std::span<const Vec2> vertices) {
  const std::size_t n = vertices.size();
  if (n < 2) throw std::invalid_argument("obstacle polygon needs at least two vertices");
  const std::size_t base = segments_.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = vertices[i];
    const Vec2& b = vertices[(i + 1) % n];
    if (a == b) throw std::invalid_argument("obstacle edge has coincident endpoints");
    ObstacleSegment seg;
    seg.endpoint_a = a;
    seg.endpoint_b = b;
    seg.counter_clockwise = true;
    seg.prev = base + (i + n - 1) % n;
    seg.next = base + (i + 1) % n;
    if (n == 2) {
      seg.convex_a = true;
    } else {
      const Vec2& prev = vertices[(i + n - 1) % n];
      seg.convex_a = det(a - prev, b - a) >= 0.0;
    }
    segments_.push_back(seg);
  }
}

void ObstacleSet::add_rect(const Rect& r) {
  if (r.empty()) return;
  const Vec2 corners[4] = {r.lo, {r.hi.x, r.lo.y}, r.hi, {r.lo.x, r.hi.y}};
  add_polygon(corners);
}

ConstraintSet compute_constraints(const PedestrianState& subject,
                                  std::span<const PedestrianState> neighbors,
                                  const ObstacleSet& obstacles, const OrcaParams& params) {
  if (params.time_horizon <= 0.0 || params.obstacle_horizon <= 0.0) {
    throw std::invalid_argument("time horizons must be positive");
  }
  std::vector<Line> lines;
  add_obstacle_lines(subject, obstacles, params, lines);
  ConstraintSet out;
  out.obstacle_count = lines.size();

  const double cutoff = params.neighbor_distance_factor * subject.radius;
  std::vector<std::pair<double, const PedestrianState*>> near;
  for (const auto& n : neighbors) {
    if (!n.active || n.id == subject.id) continue;
    const double d = abs_sq(n.position - subject.position);
    if (d < cutoff * cutoff) near.emplace_back(d, &n);
  }
  std::sort(near.begin(), near.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second->id < b.second->id;
  });
  if (near.size() > params.max_neighbors) near.resize(params.max_neighbors);
  std::sort(near.begin(), near.end(),
            [](const auto& a, const auto& b) { return a.second->id < b.second->id; });
  for (const auto& [d, n] : near) lines.push_back(agent_line(subject, *n, params));

  out.constraints.reserve(lines.size());
  for (const auto& l : lines) out.constraints.push_back(to_constraint(l));
  return out;
}

Vec2 solve_velocity(std::span<const HalfPlaneConstraint> constraints, Vec2 preferred,
                    double max_speed, std::size_t obstacle_count) {
  if (!(max_speed > 0.0)) throw std::invalid_argument("max_speed must be positive");
  std::vector<Line> lines;
  lines.reserve(constraints.size());
  for (const auto& c : constraints) lines.push_back(to_line(c));
  return solve_lines(lines, std::min(obstacle_count, lines.size()), preferred, max_speed);
}

void step_velocities(std::span<PedestrianState> peds, const ObstacleSet& obstacles,
                     const OrcaParams& params) {
  const std::vector<PedestrianState> snapshot(peds.begin(), peds.end());
  const auto n = static_cast<std::ptrdiff_t>(snapshot.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (!snapshot[i].active) continue;
    peds[i].optimal_velocity =
        optimal_velocity_for(static_cast<std::size_t>(i), snapshot, obstacles, params);
  }
  contact_guard(peds, true);
}

void step_velocities_serial(std::span<PedestrianState> peds, const ObstacleSet& obstacles,
                            const OrcaParams& params) {
  const std::vector<PedestrianState> snapshot(peds.begin(), peds.end());
  for (std::size_t i = 0; i < snapshot.size(); ++i) {
    if (!snapshot[i].active) continue;
    peds[i].optimal_velocity = optimal_velocity_for(i, snapshot, obstacles, params);
  }
  contact_guard(peds, false);
}

}  // namespace evac::orca
