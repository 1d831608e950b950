#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "evac/geometry.hpp"

namespace evac::env {

enum class WallSide { left, bottom, right, top };

/// An exit is a gap in one wall. `center` lies on the outer wall line.
struct ExitSpec {
  Vec2 center;
  double width = 8.0;
  int open_frame = 0;
  WallSide wall_side = WallSide::left;

  bool is_open(int frame) const { return frame >= open_frame; }
};

enum class ScenarioFamily { width_ratio, distribution_ratio, delayed_open };

std::string_view to_string(ScenarioFamily f);
ScenarioFamily parse_family(std::string_view s);

/// Two-term ratio "a:b". Values are kept as doubles so 1:1.5 is representable.
struct Ratio {
  double first = 1.0;
  double second = 1.0;

  static Ratio parse(std::string_view s);
  std::string str() const;
  bool operator==(const Ratio&) const = default;
};

/// Inputs to build_scenario; defaults are the full-size room.
struct ScenarioParams {
  double side_length = 100.0;
  double wall_width = 2.0;
  int pedestrian_count = 12;
  double pedestrian_radius = 2.0;
  double max_speed = 2.5;
  double base_exit_width_factor = 4.0;  // exit width in radii before ratios
  Ratio width_ratio{1.0, 1.0};          // w_b : w_l
  Ratio distribution_ratio{1.0, 1.0};   // N_l : N_b
  int exit_l_open_frame = 15;           // used by delayed_open only
  int horizon = 200;
};

struct RoomScenario {
  ScenarioFamily family = ScenarioFamily::width_ratio;
  ScenarioParams params;
  std::uint64_t seed = 0;
  std::vector<ExitSpec> exits;  // [0] = Exit_l (left wall), [1] = Exit_b (bottom wall)
  std::vector<Vec2> spawn_positions;
  std::vector<int> designated_exit;  // nearest exit at spawn, per pedestrian

  double side_length() const { return params.side_length; }
  double wall_width() const { return params.wall_width; }
  double extent() const { return params.side_length + 2.0 * params.wall_width; }
  int pedestrian_count() const { return params.pedestrian_count; }
  double radius() const { return params.pedestrian_radius; }
  int horizon() const { return params.horizon; }

  /// Open interior square.
  Rect interior() const;
  /// Gap rectangle cut into the wall for exit `i`.
  Rect exit_gap(std::size_t i) const;
  /// Solid wall pieces at `frame`; closed exits stay solid.
  std::vector<Rect> wall_rects(int frame) const;
  /// Bitmask of exits open at `frame`.
  unsigned open_mask(int frame) const;
};

/// Per-half pedestrian counts (N_l, N_b) for a total under ratio `r`.
/// Throws std::invalid_argument when the split is not integral.
std::pair<int, int> split_counts(int total, const Ratio& r);

/// Builds a deterministic scenario for `seed`.
RoomScenario build_scenario(ScenarioFamily family, const ScenarioParams& params,
                            std::uint64_t seed);

}  // namespace evac::env
