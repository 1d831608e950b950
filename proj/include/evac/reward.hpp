#pragma once

#include <span>

#include "evac/geometry.hpp"

namespace evac::reward {

/// Weights of the composite per-frame reward. The penalty is subtracted on
/// every non-terminal frame.
struct RewardWeights {
  double w1 = 15.0;  // goal progress
  double w2 = 1.25;  // exit alignment
  double w3 = 0.5;   // smoothness
  double w4 = 0.4;   // distance exponent, in (0, 1]
  double penalty = 2.5;

  void validate() const;
};

struct RewardComponents {
  double goal = 0.0;
  double alignment = 0.0;
  double smooth = 0.0;
};

/// max_j(1 - d(p_now, e_j)^w4) - max_j(1 - d(p_prev, e_j)^w4); 0 with no open exit.
double goal_reward(Vec2 p_now, Vec2 p_prev, std::span<const Vec2> open_exits, double w4);

/// max_j dot(opt_v, unit(e_j - p)) / v_max. Exits coincident with p are skipped;
/// 0 when nothing remains.
double alignment_reward(Vec2 opt_v, Vec2 p, std::span<const Vec2> open_exits, double v_max);

/// Unnormalized dot product of consecutive optimal velocities.
inline double smooth_reward(Vec2 opt_v_now, Vec2 opt_v_prev) { return dot(opt_v_now, opt_v_prev); }

double total_reward(const RewardComponents& c, const RewardWeights& w, bool terminal);

}  // namespace evac::reward
