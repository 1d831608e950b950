#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "evac/environment.hpp"

namespace evac::raster {

inline constexpr int kRasterSize = 84;
inline constexpr int kStackDepth = 3;

inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kObstacle = 100;
inline constexpr std::uint8_t kSubject = 255;

/// 84x84 grayscale image, row-major, row 0 at the top.
struct Raster {
  std::array<std::uint8_t, kRasterSize * kRasterSize> pixels{};

  std::uint8_t at(int row, int col) const { return pixels[static_cast<std::size_t>(row * kRasterSize + col)]; }
  std::uint8_t& at(int row, int col) { return pixels[static_cast<std::size_t>(row * kRasterSize + col)]; }
  bool operator==(const Raster&) const = default;
};

using RasterPtr = std::shared_ptr<const Raster>;

struct PixelCoord {
  int row = 0;
  int col = 0;
  bool operator==(const PixelCoord&) const = default;
};

/// Affine map between the room bounding box [0, extent]^2 and the pixel grid,
/// y flipped so ECS up is SCS row 0.
class ScreenMapping {
 public:
  explicit ScreenMapping(double extent) : extent_(extent), scale_(kRasterSize / extent) {}

  /// Positions outside the box clamp to the border pixel.
  PixelCoord ecs_to_scs(const Vec2& p) const;
  Vec2 pixel_center(int row, int col) const;
  double scale() const { return scale_; }

 private:
  double extent_;
  double scale_;
};

/// Renders egocentric observations for one scenario. Wall backgrounds are
/// cached per open-exit configuration.
class Rasterizer {
 public:
  explicit Rasterizer(const env::RoomScenario& scenario);

  const ScreenMapping& mapping() const { return mapping_; }

  /// Walls and other pedestrians at 100, the subject at 255. A negative
  /// subject id renders walls and every pedestrian at 100.
  Raster rasterize(const env::SimulationState& state, int subject_id) const;

  /// Whole-scene view for figures: walls 100, every active pedestrian 255.
  Raster render_overview(const env::SimulationState& state) const;

  /// Walls-only image at `frame`.
  const Raster& background(int frame) const;

 private:
  void paint_disc(Raster& img, const Vec2& center, double radius, std::uint8_t value) const;

  env::RoomScenario scenario_;
  ScreenMapping mapping_;
  std::map<unsigned, Raster> backgrounds_;
};

/// Three most recent rasters, oldest first. Frames are shared immutably.
class StateTensor {
 public:
  StateTensor() = default;

  /// Stack filled with copies of `initial`.
  static StateTensor fresh(RasterPtr initial);

  /// Drops the oldest frame and appends `next`.
  void push_frame(RasterPtr next);
  StateTensor pushed(RasterPtr next) const;

  const Raster& frame(int i) const { return *frames_[static_cast<std::size_t>(i)]; }
  const RasterPtr& frame_ptr(int i) const { return frames_[static_cast<std::size_t>(i)]; }
  bool valid() const { return frames_[0] && frames_[1] && frames_[2]; }
  bool same_content(const StateTensor& o) const;

 private:
  std::array<RasterPtr, kStackDepth> frames_;
};

inline StateTensor push_frame(StateTensor tensor, RasterPtr raster) {
  tensor.push_frame(std::move(raster));
  return tensor;
}

/// Binary PGM (P5, 84x84, maxval 255).
std::string encode_pgm(const Raster& r);
Raster decode_pgm(const std::string& bytes);
void write_pgm(const Raster& r, const std::filesystem::path& path);
Raster read_pgm(const std::filesystem::path& path);

}  // namespace evac::raster
