#ifndef ADUNIT__HARNESS__SCENE_HPP_
#define ADUNIT__HARNESS__SCENE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "adunit/config.hpp"
#include "adunit/error.hpp"
#include "adunit/image.hpp"
#include "adunit/lane/lane.hpp"

// Synthetic stand-in for the depth camera: flat-shaded boxes against a far
// background, and a lane curve painted on grey asphalt.

namespace adunit::harness
{

/// Axis-aligned box standing on the ground, base frame. The centre moves by
/// `velocity_x` meters per frame along the forward axis.
struct ObstaclePlacement
{
  double center_x {2.25};
  double center_y {0.0};
  double size_x {0.5};
  double size_y {0.5};
  double size_z {0.5};
  double velocity_x {0.0};
};

/// Lane centreline in bird's-eye pixels: col = coeffs(row).
struct LaneShape
{
  lane::PolyCoeffs coeffs {{320.0, 0.0, 0.0}};
  lane::LaneColor color {lane::LaneColor::white};
  double width_px {24.0};
};

struct SceneSpec
{
  std::size_t width {640};
  std::size_t height {480};
  std::vector<ObstaclePlacement> obstacles;
  LaneShape lane;
  double background_depth {10.0};
  std::size_t frame_count {30};
  double fps_cap {30.0};
  std::uint64_t seed {1};
};

inline constexpr Rgb kAsphalt {90, 90, 90};
inline constexpr Rgb kWhitePaint {255, 255, 255};
inline constexpr Rgb kYellowPaint {255, 210, 0};
inline constexpr Rgb kObstacleColor {150, 60, 40};

inline void validate_scene(const SceneSpec & spec, const Config & cfg)
{
  if (spec.width == 0 || spec.height == 0) {
    throw Error(Errc::invalid_spec, "image size must be positive");
  }
  if (spec.width != cfg.camera.width || spec.height != cfg.camera.height) {
    throw Error(Errc::invalid_spec, "image size does not match the configured camera");
  }
  if (!(spec.fps_cap > 0.0)) {
    throw Error(Errc::invalid_spec, "frame rate cap must be > 0");
  }
  if (!(spec.background_depth > 0.0) || spec.background_depth * 1000.0 > 65535.0) {
    throw Error(Errc::invalid_spec, "background depth must be in (0, 65.535] m");
  }
  if (!(spec.lane.width_px > 0.0) || spec.lane.coeffs.a.empty()) {
    throw Error(Errc::invalid_spec, "lane needs a width and a generator polynomial");
  }
  for (const auto & o : spec.obstacles) {
    if (!(o.size_x > 0.0 && o.size_y > 0.0 && o.size_z > 0.0)) {
      throw Error(Errc::invalid_spec, "obstacle sizes must be positive");
    }
  }
}

namespace detail
{

inline std::uint64_t mix(std::uint64_t x) noexcept
{
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Ray parameter of the first hit with an axis-aligned box, or +inf.
inline double ray_box(
  const std::array<double, 3> & o, const std::array<double, 3> & d,
  const std::array<double, 3> & lo, const std::array<double, 3> & hi) noexcept
{
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (d[k] == 0.0) {
      if (o[k] < lo[k] || o[k] > hi[k]) {
        return std::numeric_limits<double>::infinity();
      }
      continue;
    }
    double a = (lo[k] - o[k]) / d[k];
    double b = (hi[k] - o[k]) / d[k];
    if (a > b) {
      std::swap(a, b);
    }
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return t0 > 0.0 ? t0 : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Renders frames of a scene. Static content is precomputed once; each frame
/// adds moving obstacles and seeded asphalt texture.
class SceneRenderer
{
public:
  SceneRenderer(const Config & cfg, SceneSpec spec)
  : spec_(std::move(spec))
  {
    validate_scene(spec_, cfg);
    const auto & p = cfg.calibration;
    const auto & t = cfg.obstacle.transform;
    const std::size_t n = spec_.width * spec_.height;
    dirs_.resize(n);
    lane_.assign(n, 0);
    // A pixel at depth w back-projects to o + w * d with d_z = 1.
    const std::array<double, 3> oc {-p.tx / p.fx, -p.ty / p.fy, 0.0};
    origin_ = rotate(t, oc);
    for (int k = 0; k < 3; ++k) {
      origin_[k] += t.translation[k];
    }
    const auto & bird = cfg.lane.homography;
    const double half = spec_.lane.width_px / 2.0;
    for (std::size_t r = 0; r < spec_.height; ++r) {
      for (std::size_t c = 0; c < spec_.width; ++c) {
        const std::size_t i = r * spec_.width + c;
        const std::array<double, 3> dc {(static_cast<double>(c) - p.cx) / p.fx,
          (static_cast<double>(r) - p.cy) / p.fy, 1.0};
        dirs_[i] = rotate(t, dc);
        const auto q = bird.apply(static_cast<double>(c), static_cast<double>(r));
        if (q.w > 0.0 && q.row >= 0.0 && q.row < static_cast<double>(spec_.height) &&
          q.col >= 0.0 && q.col < static_cast<double>(spec_.width) &&
          std::abs(q.col - spec_.lane.coeffs(q.row)) <= half)
        {
          lane_[i] = 1;
        }
      }
    }
  }

  const SceneSpec & spec() const noexcept {return spec_;}
  std::size_t pixel_count() const noexcept {return spec_.width * spec_.height;}

  /// Depth in millimeters and colour for frame `index`.
  void render_into(
    std::size_t index, std::span<std::uint16_t> depth_mm, std::span<Rgb> color) const
  {
    const std::size_t n = pixel_count();
    if (depth_mm.size() < n || color.size() < n) {
      throw Error(Errc::dimension_mismatch, "render buffers too small");
    }
    std::vector<std::pair<std::array<double, 3>, std::array<double, 3>>> boxes;
    for (const auto & o : spec_.obstacles) {
      const double cx = o.center_x - o.velocity_x * static_cast<double>(index);
      boxes.push_back(
        {{cx - o.size_x / 2, o.center_y - o.size_y / 2, 0.0},
          {cx + o.size_x / 2, o.center_y + o.size_y / 2, o.size_z}});
    }
    const auto background =
      static_cast<std::uint16_t>(std::lround(spec_.background_depth * 1000.0));
    const Rgb paint = spec_.lane.color == lane::LaneColor::white ? kWhitePaint : kYellowPaint;
    const std::uint64_t frame_key = detail::mix(spec_.seed ^ detail::mix(index));
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto & [lo, hi] : boxes) {
        best = std::min(best, detail::ray_box(origin_, dirs_[i], lo, hi));
      }
      if (std::isfinite(best)) {
        const double mm = std::min(65535.0, std::round(best * 1000.0));
        depth_mm[i] = static_cast<std::uint16_t>(mm);
        color[i] = kObstacleColor;
      } else {
        depth_mm[i] = background;
        if (lane_[i] != 0) {
          color[i] = paint;
        } else {
          const auto jitter = static_cast<int>(detail::mix(frame_key + i) % 17) - 8;
          const auto g = static_cast<std::uint8_t>(kAsphalt.r + jitter);
          color[i] = {g, g, g};
        }
      }
    }
  }

  std::pair<DepthImageMm, ColorImage> render(std::size_t index) const
  {
    DepthImageMm depth(spec_.width, spec_.height);
    ColorImage color(spec_.width, spec_.height);
    render_into(index, depth.data, color.data);
    return {std::move(depth), std::move(color)};
  }

private:
  static std::array<double, 3> rotate(const RigidTransform & t, const std::array<double, 3> & v)
  {
    const auto & r = t.rotation;
    return {r[0] * v[0] + r[1] * v[1] + r[2] * v[2], r[3] * v[0] + r[4] * v[1] + r[5] * v[2],
      r[6] * v[0] + r[7] * v[1] + r[8] * v[2]};
  }

  SceneSpec spec_;
  std::array<double, 3> origin_ {};
  std::vector<std::array<double, 3>> dirs_;
  std::vector<std::uint8_t> lane_;
};

/// All frames of a scene, depth converted to meters.
inline std::vector<std::pair<DepthImage, ColorImage>> generate_scene(
  const Config & cfg, const SceneSpec & spec)
{
  SceneRenderer renderer(cfg, spec);
  std::vector<std::pair<DepthImage, ColorImage>> frames;
  frames.reserve(spec.frame_count);
  for (std::size_t i = 0; i < spec.frame_count; ++i) {
    auto [mm, color] = renderer.render(i);
    frames.emplace_back(depth_from_mm(mm.view()), std::move(color));
  }
  return frames;
}

/// Scene used by `run` and `bench`: one box approaching the car and a
/// gently curving white lane.
inline SceneSpec default_scene(std::size_t frames = 300, double fps_cap = 30.0, std::uint64_t seed = 1)
{
  SceneSpec s;
  s.frame_count = frames;
  s.fps_cap = fps_cap;
  s.seed = seed;
  s.obstacles.push_back({3.0, 0.1, 0.4, 0.4, 0.4, 0.005});
  s.lane.coeffs = {{300.0, 0.05, 0.0002}};
  return s;
}

}  // namespace adunit::harness

#endif  // ADUNIT__HARNESS__SCENE_HPP_
