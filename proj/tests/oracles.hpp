// Independent reference computations used by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "evac/geometry.hpp"

namespace oracle {

using evac::Vec2;

/// Minimum over t in [0, tau] of |rel_pos - rel_vel * t|.
inline double closest_approach(Vec2 rel_pos, Vec2 rel_vel, double tau) {
  const double vv = evac::dot(rel_vel, rel_vel);
  double t = vv > 0.0 ? evac::dot(rel_pos, rel_vel) / vv : 0.0;
  t = std::clamp(t, 0.0, tau);
  return evac::norm(rel_pos - rel_vel * t);
}

/// True when relative velocity `v` leads to a collision within tau.
inline bool in_velocity_obstacle(Vec2 rel_pos, Vec2 v, double combined_radius, double tau) {
  return closest_approach(rel_pos, v, tau) < combined_radius;
}

/// Smallest change u moving `v` out of the truncated velocity obstacle, found
/// by a dense grid search in a window around v.
inline Vec2 brute_force_u(Vec2 rel_pos, Vec2 v, double combined_radius, double tau, double window,
                          double step) {
  Vec2 best{};
  double best_d = INFINITY;
  const bool inside = in_velocity_obstacle(rel_pos, v, combined_radius, tau);
  for (double dx = -window; dx <= window; dx += step) {
    for (double dy = -window; dy <= window; dy += step) {
      const Vec2 c = v + Vec2{dx, dy};
      // Boundary points: membership flips against a neighbor one step away.
      if (in_velocity_obstacle(rel_pos, c, combined_radius, tau) == inside) continue;
      const double d = dx * dx + dy * dy;
      if (d < best_d) {
        best_d = d;
        best = {dx, dy};
      }
    }
  }
  return best;
}

/// Time of first contact of a moving disc with a static segment, or INFINITY.
inline double segment_contact_time(Vec2 center, Vec2 vel, double radius, Vec2 a, Vec2 b, double t_max,
                                   int samples = 2000) {
  for (int k = 0; k <= samples; ++k) {
    const double t = t_max * k / samples;
    if (evac::dist_sq_point_segment(a, b, center + vel * t) < radius * radius) return t;
  }
  return INFINITY;
}

/// Plain discounted sum, written independently of n_step_fold.
inline double discounted_sum(const std::vector<double>& r, double gamma) {
  double s = 0.0;
  for (std::size_t k = 0; k < r.size(); ++k) s += std::pow(gamma, static_cast<double>(k)) * r[k];
  return s;
}

/// Straight-line categorical projection for a terminal reward.
inline std::vector<double> terminal_projection(double r, double v_min, double v_max, int atoms) {
  std::vector<double> m(static_cast<std::size_t>(atoms), 0.0);
  const double dz = (v_max - v_min) / (atoms - 1);
  r = std::clamp(r, v_min, v_max);
  for (int i = 0; i < atoms; ++i) {
    // Triangular kernel around each atom.
    const double w = 1.0 - std::fabs(r - (v_min + i * dz)) / dz;
    if (w > 0.0) m[static_cast<std::size_t>(i)] = w;
  }
  return m;
}

/// r_util computed from its definition with explicit branches.
inline double utilization(int n_l, int n_b, double w_l, double w_b) {
  if (n_l == 0 && n_b == 0) return 1.0;
  if (n_l == 0 || n_b == 0) return 0.0;
  const double a = n_l / w_l;
  const double b = n_b / w_b;
  return a < b ? a / b : b / a;
}

}  // namespace oracle
