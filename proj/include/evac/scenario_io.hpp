#pragma once

#include <filesystem>
#include <string_view>

#include <json.hpp>

#include "evac/scenario.hpp"

namespace evac::env {

/// Flat key/value form of a scenario. Keys: family, seed, side_length,
/// wall_width, pedestrian_count, pedestrian_radius, max_speed,
/// base_exit_width_factor, width_ratio ("a:b"), distribution_ratio ("a:b"),
/// exit_l_open_frame, horizon. Missing keys take ScenarioParams defaults.
nlohmann::json scenario_to_json(const RoomScenario& sc);
RoomScenario scenario_from_json(const nlohmann::json& j);

/// Applies overrides of the form "k=v,k=v" onto `params`; unknown keys throw.
void apply_overrides(ScenarioParams& params, std::string_view overrides);

/// Applies one JSON object onto `params` (same keys as scenario_to_json).
void apply_json(ScenarioParams& params, const nlohmann::json& j);

RoomScenario load_scenario(const std::filesystem::path& path);
void save_scenario(const RoomScenario& sc, const std::filesystem::path& path);

}  // namespace evac::env
