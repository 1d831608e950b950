#include "evac/scenario_io.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

namespace evac::env {

using nlohmann::json;

json scenario_to_json(const RoomScenario& sc) {
  const ScenarioParams& p = sc.params;
  return json{{"family", std::string(to_string(sc.family))},
              {"seed", sc.seed},
              {"side_length", p.side_length},
              {"wall_width", p.wall_width},
              {"pedestrian_count", p.pedestrian_count},
              {"pedestrian_radius", p.pedestrian_radius},
              {"max_speed", p.max_speed},
              {"base_exit_width_factor", p.base_exit_width_factor},
              {"width_ratio", p.width_ratio.str()},
              {"distribution_ratio", p.distribution_ratio.str()},
              {"exit_l_open_frame", p.exit_l_open_frame},
              {"horizon", p.horizon}};
}

void apply_json(ScenarioParams& p, const json& j) {
  for (const auto& [key, value] : j.items()) {
    if (key == "family" || key == "seed") continue;
    if (key == "side_length") p.side_length = value.get<double>();
    else if (key == "wall_width") p.wall_width = value.get<double>();
    else if (key == "pedestrian_count") p.pedestrian_count = value.get<int>();
    else if (key == "pedestrian_radius") p.pedestrian_radius = value.get<double>();
    else if (key == "max_speed") p.max_speed = value.get<double>();
    else if (key == "base_exit_width_factor") p.base_exit_width_factor = value.get<double>();
    else if (key == "width_ratio") p.width_ratio = Ratio::parse(value.get<std::string>());
    else if (key == "distribution_ratio") p.distribution_ratio = Ratio::parse(value.get<std::string>());
    else if (key == "exit_l_open_frame") p.exit_l_open_frame = value.get<int>();
    else if (key == "horizon") p.horizon = value.get<int>();
    else throw std::invalid_argument("unknown scenario key: " + key);
  }
}

RoomScenario scenario_from_json(const json& j) {
  ScenarioParams p;
  apply_json(p, j);
  const auto family = parse_family(j.value("family", std::string("width_ratio")));
  return build_scenario(family, p, j.value("seed", std::uint64_t{0}));
}

void apply_overrides(ScenarioParams& params, std::string_view overrides) {
  json j = json::object();
  std::size_t pos = 0;
  while (pos < overrides.size()) {
    std::size_t end = overrides.find(',', pos);
    if (end == std::string_view::npos) end = overrides.size();
    const std::string_view item = overrides.substr(pos, end - pos);
    pos = end + 1;
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("override must be key=value: " + std::string(item));
    }
    const std::string key(item.substr(0, eq));
    const std::string value(item.substr(eq + 1));
    if (key == "width_ratio" || key == "distribution_ratio") {
      j[key] = value;
    } else if (key == "pedestrian_count" || key == "exit_l_open_frame" || key == "horizon") {
      j[key] = std::stoi(value);
    } else {
      j[key] = std::stod(value);
    }
  }
  apply_json(params, j);
}

RoomScenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file " + path.string());
  return scenario_from_json(json::parse(in));
}

void save_scenario(const RoomScenario& sc, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scenario file " + path.string());
  out << scenario_to_json(sc).dump(2) << '\n';
}

}  // namespace evac::env
