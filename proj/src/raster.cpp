#include "evac/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace evac::raster {

PixelCoord ScreenMapping::ecs_to_scs(const Vec2& p) const {
  auto clamp = [](double v) {
    const int i = static_cast<int>(std::floor(v));
    return std::clamp(i, 0, kRasterSize - 1);
  };
  return {clamp((extent_ - p.y) * scale_), clamp(p.x * scale_)};
}

Vec2 ScreenMapping::pixel_center(int row, int col) const {
  return {(col + 0.5) / scale_, extent_ - (row + 0.5) / scale_};
}

Rasterizer::Rasterizer(const env::RoomScenario& scenario)
    : scenario_(scenario), mapping_(scenario.extent()) {
  std::vector<int> frames{0};
  for (const auto& e : scenario_.exits) frames.push_back(e.open_frame);
  for (int f : frames) {
    const unsigned mask = scenario_.open_mask(f);
    if (backgrounds_.contains(mask)) continue;
    Raster img;
    const auto walls = scenario_.wall_rects(f);
    for (int row = 0; row < kRasterSize; ++row) {
      for (int col = 0; col < kRasterSize; ++col) {
        const Vec2 c = mapping_.pixel_center(row, col);
        for (const Rect& w : walls) {
          if (w.contains(c)) {
            img.at(row, col) = kObstacle;
            break;
          }
        }
      }
    }
    backgrounds_.emplace(mask, img);
  }
}

const Raster& Rasterizer::background(int frame) const {
  return backgrounds_.at(scenario_.open_mask(frame));
}

void Rasterizer::paint_disc(Raster& img, const Vec2& center, double radius,
                            std::uint8_t value) const {
  const double r_sq = radius * radius;
  const PixelCoord top_left = mapping_.ecs_to_scs({center.x - radius, center.y + radius});
  const PixelCoord bottom_right = mapping_.ecs_to_scs({center.x + radius, center.y - radius});
  for (int row = top_left.row; row <= bottom_right.row; ++row) {
    for (int col = top_left.col; col <= bottom_right.col; ++col) {
      if (abs_sq(mapping_.pixel_center(row, col) - center) <= r_sq) img.at(row, col) = value;
    }
  }
}

Raster Rasterizer::rasterize(const env::SimulationState& state, int subject_id) const {
  Raster img = background(state.frame);
  const orca::PedestrianState* subject = nullptr;
  for (const auto& p : state.pedestrians) {
    if (!p.active) continue;
    if (p.id == subject_id) {
      subject = &p;
      continue;
    }
    paint_disc(img, p.position, p.radius, kObstacle);
  }
  if (subject) paint_disc(img, subject->position, subject->radius, kSubject);
  return img;
}

Raster Rasterizer::render_overview(const env::SimulationState& state) const {
  Raster img = background(state.frame);
  for (const auto& p : state.pedestrians) {
    if (p.active) paint_disc(img, p.position, p.radius, kSubject);
  }
  return img;
}

StateTensor StateTensor::fresh(RasterPtr initial) {
  StateTensor t;
  t.frames_.fill(initial);
  return t;
}

void StateTensor::push_frame(RasterPtr next) {
  std::shift_left(frames_.begin(), frames_.end(), 1);
  frames_.back() = std::move(next);
}

StateTensor StateTensor::pushed(RasterPtr next) const {
  StateTensor t = *this;
  t.push_frame(std::move(next));
  return t;
}

bool StateTensor::same_content(const StateTensor& o) const {
  for (int i = 0; i < kStackDepth; ++i) {
    if (!(frame(i) == o.frame(i))) return false;
  }
  return true;
}

std::string encode_pgm(const Raster& r) {
  std::string out = "P5\n84 84\n255\n";
  out.append(reinterpret_cast<const char*>(r.pixels.data()), r.pixels.size());
  return out;
}

Raster decode_pgm(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic;
  int w = 0;
  int h = 0;
  int maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w != kRasterSize || h != kRasterSize || maxval != 255) {
    throw std::runtime_error("not an 84x84 P5 PGM");
  }
  in.get();  // single whitespace after the header
  Raster r;
  in.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(r.pixels.size())) {
    throw std::runtime_error("truncated PGM payload");
  }
  return r;
}

void write_pgm(const Raster& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::string bytes = encode_pgm(r);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Raster read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return decode_pgm(std::string(std::istreambuf_iterator<char>(in), {}));
}

}  // namespace evac::raster
