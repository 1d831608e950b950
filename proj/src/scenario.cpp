#include "evac/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace evac::env {

std::string_view to_string(ScenarioFamily f) {
  switch (f) {
    case ScenarioFamily::width_ratio: return "width_ratio";
    case ScenarioFamily::distribution_ratio: return "distribution_ratio";
    case ScenarioFamily::delayed_open: return "delayed_open";
  }
  return "unknown";
}

ScenarioFamily parse_family(std::string_view s) {
  if (s == "width_ratio") return ScenarioFamily::width_ratio;
  if (s == "distribution_ratio") return ScenarioFamily::distribution_ratio;
  if (s == "delayed_open") return ScenarioFamily::delayed_open;
  throw std::invalid_argument("unknown scenario family: " + std::string(s));
}

Ratio Ratio::parse(std::string_view s) {
  const auto colon = s.find(':');
  if (colon == std::string_view::npos) throw std::invalid_argument("ratio must look like a:b");
  auto num = [](std::string_view part) {
    double v = 0.0;
    const auto res = std::from_chars(part.data(), part.data() + part.size(), v);
    if (res.ec != std::errc{} || res.ptr != part.data() + part.size() || !(v > 0.0)) {
      throw std::invalid_argument("bad ratio term: " + std::string(part));
    }
    return v;
  };
  return {num(s.substr(0, colon)), num(s.substr(colon + 1))};
}

std::string Ratio::str() const {
  std::ostringstream os;
  os << first << ':' << second;
  return os.str();
}

Rect RoomScenario::interior() const {
  const double w = wall_width();
  return {{w, w}, {w + side_length(), w + side_length()}};
}

Rect RoomScenario::exit_gap(std::size_t i) const {
  const ExitSpec& e = exits.at(i);
  const double w = wall_width();
  const double b = extent();
  const double h = e.width / 2.0;
  switch (e.wall_side) {
    case WallSide::left: return {{0.0, e.center.y - h}, {w, e.center.y + h}};
    case WallSide::right: return {{b - w, e.center.y - h}, {b, e.center.y + h}};
    case WallSide::bottom: return {{e.center.x - h, 0.0}, {e.center.x + h, w}};
    case WallSide::top: return {{e.center.x - h, b - w}, {e.center.x + h, b}};
  }
  return {};
}

unsigned RoomScenario::open_mask(int frame) const {
  unsigned mask = 0;
  for (std::size_t i = 0; i < exits.size(); ++i) {
    if (exits[i].is_open(frame)) mask |= 1u << i;
  }
  return mask;
}

std::vector<Rect> RoomScenario::wall_rects(int frame) const {
  const double w = wall_width();
  const double b = extent();
  std::vector<Rect> out;
  for (WallSide side : {WallSide::left, WallSide::bottom, WallSide::right, WallSide::top}) {
    const bool vertical = side == WallSide::left || side == WallSide::right;
    // Vertical walls own the corners.
    const double lo = vertical ? 0.0 : w;
    const double hi = vertical ? b : b - w;
    std::vector<std::pair<double, double>> gaps;
    for (std::size_t i = 0; i < exits.size(); ++i) {
      if (exits[i].wall_side != side || !exits[i].is_open(frame)) continue;
      const Rect g = exit_gap(i);
      gaps.emplace_back(vertical ? g.lo.y : g.lo.x, vertical ? g.hi.y : g.hi.x);
    }
    std::sort(gaps.begin(), gaps.end());
    double cursor = lo;
    auto emit = [&](double a, double c) {
      if (c - a <= 1e-12) return;
      switch (side) {
        case WallSide::left: out.push_back({{0.0, a}, {w, c}}); break;
        case WallSide::right: out.push_back({{b - w, a}, {b, c}}); break;
        case WallSide::bottom: out.push_back({{a, 0.0}, {c, w}}); break;
        case WallSide::top: out.push_back({{a, b - w}, {c, b}}); break;
      }
    };
    for (const auto& [g0, g1] : gaps) {
      emit(cursor, std::max(cursor, g0));
      cursor = std::max(cursor, g1);
    }
    emit(cursor, hi);
  }
  return out;
}

std::pair<int, int> split_counts(int total, const Ratio& r) {
  if (total < 0) throw std::invalid_argument("pedestrian count must be non-negative");
  const double left = total * r.first / (r.first + r.second);
  const double rounded = std::round(left);
  if (std::fabs(left - rounded) > 1e-9) {
    throw std::invalid_argument("pedestrian count " + std::to_string(total) +
                                " cannot be split " + r.str());
  }
  const int n_l = static_cast<int>(rounded);
  return {n_l, total - n_l};
}

namespace {

int nearest_exit(const std::vector<ExitSpec>& exits, const Vec2& p) {
  int best = 0;
  double best_d = distance(p, exits[0].center);
  for (std::size_t i = 1; i < exits.size(); ++i) {
    const double d = distance(p, exits[i].center);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace

RoomScenario build_scenario(ScenarioFamily family, const ScenarioParams& params,
                            std::uint64_t seed) {
  if (!(params.side_length > 0.0) || !(params.wall_width > 0.0) ||
      !(params.pedestrian_radius > 0.0) || !(params.max_speed > 0.0) || params.horizon <= 0) {
    throw std::invalid_argument("scenario dimensions must be positive");
  }
  RoomScenario sc;
  sc.family = family;
  sc.params = params;
  sc.seed = seed;

  const double r = params.pedestrian_radius;
  const double base_width = params.base_exit_width_factor * r;
  double w_l = base_width;
  const double w_b = base_width;
  Ratio distribution{1.0, 1.0};
  int open_l = 0;

  switch (family) {
    case ScenarioFamily::width_ratio:
      // p_ew = w_b / w_l, so 1:2 doubles the left exit.
      w_l = base_width * params.width_ratio.second / params.width_ratio.first;
      break;
    case ScenarioFamily::distribution_ratio:
      distribution = params.distribution_ratio;
      break;
    case ScenarioFamily::delayed_open:
      if (params.exit_l_open_frame < 0) throw std::invalid_argument("open frame must be >= 0");
      open_l = params.exit_l_open_frame;
      break;
  }
  sc.params.width_ratio = family == ScenarioFamily::width_ratio ? params.width_ratio : Ratio{};
  sc.params.distribution_ratio = distribution;

  const double mid = params.wall_width + params.side_length / 2.0;
  sc.exits.push_back({{0.0, mid}, w_l, open_l, WallSide::left});
  sc.exits.push_back({{mid, 0.0}, w_b, 0, WallSide::bottom});
  for (std::size_t i = 0; i < sc.exits.size(); ++i) {
    if (sc.exits[i].width >= params.side_length) {
      throw std::invalid_argument("exit wider than its wall");
    }
  }

  const auto [n_l, n_b] = split_counts(params.pedestrian_count, distribution);

  std::mt19937_64 rng(seed);
  const Rect inner = sc.interior();
  const double margin = r + 0.25;
  std::uniform_real_distribution<double> ux(inner.lo.x + margin, inner.hi.x - margin);
  std::uniform_real_distribution<double> uy(inner.lo.y + margin, inner.hi.y - margin);
  const double min_sep = 2.0 * r + 0.5;

  auto place = [&](int target_exit, int count) {
    for (int k = 0; k < count; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < 200000 && !placed; ++attempt) {
        const Vec2 p{ux(rng), uy(rng)};
        if (nearest_exit(sc.exits, p) != target_exit) continue;
        bool clear = true;
        for (const Vec2& q : sc.spawn_positions) {
          if (distance(p, q) < min_sep) {
            clear = false;
            break;
          }
        }
        if (!clear) continue;
        sc.spawn_positions.push_back(p);
        sc.designated_exit.push_back(target_exit);
        placed = true;
      }
      if (!placed) throw std::runtime_error("could not place pedestrians without overlap");
    }
  };
  place(0, n_l);
  place(1, n_b);
  return sc;
}

}  // namespace evac::env
