#include "evac/reward.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace evac::reward {

void RewardWeights::validate() const {
  if (!(w4 > 0.0 && w4 <= 1.0)) throw std::invalid_argument("w4 must lie in (0, 1]");
  for (double v : {w1, w2, w3, w4, penalty}) {
    if (!std::isfinite(v)) throw std::invalid_argument("reward weights must be finite");
  }
}

namespace {

double best_potential(Vec2 p, std::span<const Vec2> exits, double w4) {
  double best = -std::numeric_limits<double>::infinity();
  for (const Vec2& e : exits) best = std::fmax(best, 1.0 - std::pow(distance(p, e), w4));
  return best;
}

}  // namespace

double goal_reward(Vec2 p_now, Vec2 p_prev, std::span<const Vec2> open_exits, double w4) {
  if (open_exits.empty()) return 0.0;
  return best_potential(p_now, open_exits, w4) - best_potential(p_prev, open_exits, w4);
}

double alignment_reward(Vec2 opt_v, Vec2 p, std::span<const Vec2> open_exits, double v_max) {
  if (!(v_max > 0.0)) throw std::invalid_argument("v_max must be positive");
  double best = -std::numeric_limits<double>::infinity();
  for (const Vec2& e : open_exits) {
    const Vec2 to_exit = e - p;
    if (abs_sq(to_exit) == 0.0) continue;
    best = std::fmax(best, dot(opt_v, normalize(to_exit)) / v_max);
  }
  return std::isfinite(best) ? best : 0.0;
}

double total_reward(const RewardComponents& c, const RewardWeights& w, bool terminal) {
  return w.w1 * c.goal + w.w2 * c.alignment + w.w3 * c.smooth + (terminal ? 0.0 : -w.penalty);
}

}  // namespace evac::reward
