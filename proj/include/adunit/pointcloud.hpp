#ifndef ADUNIT__POINTCLOUD_HPP_
#define ADUNIT__POINTCLOUD_HPP_

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "adunit/error.hpp"
#include "adunit/image.hpp"

namespace adunit
{

static_assert(std::endian::native == std::endian::little, "wire formats assume little-endian hosts");

/// Pinhole intrinsics with stereo baseline terms:
///
///   | fx  0 cx tx |
///   |  0 fy cy ty |
///   |  0  0  1  0 |
struct ProjectionMatrix
{
  double fx {1.0};
  double fy {1.0};
  double cx {0.0};
  double cy {0.0};
  double tx {0.0};
  double ty {0.0};

  bool valid() const noexcept
  {
    return std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) && std::isfinite(cy) &&
           std::isfinite(tx) && std::isfinite(ty) && fx > 0.0 && fy > 0.0;
  }

  friend bool operator==(const ProjectionMatrix &, const ProjectionMatrix &) = default;
};

enum class CloudFrame : std::uint32_t
{
  camera = 0,
  base = 1,
};

/// 16-byte point: three 32-bit floats and packed RGBA (R in the low byte).
struct Point3
{
  float x {0.0f};
  float y {0.0f};
  float z {0.0f};
  std::uint32_t rgba {0};

  friend bool operator==(const Point3 &, const Point3 &) = default;
};
static_assert(sizeof(Point3) == 16);

constexpr std::uint32_t pack_rgba(Rgb c) noexcept
{
  return std::uint32_t {c.r} | (std::uint32_t {c.g} << 8) | (std::uint32_t {c.b} << 16) |
         (0xFFu << 24);
}

constexpr Rgb unpack_rgb(std::uint32_t rgba) noexcept
{
  return {static_cast<std::uint8_t>(rgba & 0xFF), static_cast<std::uint8_t>((rgba >> 8) & 0xFF),
    static_cast<std::uint8_t>((rgba >> 16) & 0xFF)};
}

struct PointCloud
{
  std::vector<Point3> points;
  CloudFrame frame {CloudFrame::camera};

  std::size_t size() const noexcept {return points.size();}
  friend bool operator==(const PointCloud &, const PointCloud &) = default;
};

/// u = x*w, v = y*w; X = (u - cx*w - tx)/fx, Y = (v - cy*w - ty)/fy, Z = w.
inline Point3 backproject_pixel(const ProjectionMatrix & p, double x, double y, float w) noexcept
{
  const double wd = w;
  const double u = x * wd;
  const double v = y * wd;
  Point3 out;
  out.x = static_cast<float>((u - p.cx * wd - p.tx) / p.fx);
  out.y = static_cast<float>((v - p.cy * wd - p.ty) / p.fy);
  out.z = w;
  return out;
}

namespace detail
{

inline float to_meters(float w, float) noexcept {return w;}
inline float to_meters(std::uint16_t w, float scale) noexcept
{
  return static_cast<float>(w) / scale;
}

template<typename DepthT, typename Sink>
void backproject_rows(
  const ProjectionMatrix & p, const ImageView<DepthT> & depth, const ImageView<Rgb> & color,
  std::size_t row_begin, std::size_t row_end, Sink && sink)
{
  for (std::size_t r = row_begin; r < row_end; ++r) {
    for (std::size_t c = 0; c < depth.width; ++c) {
      const float w = to_meters(depth.at(r, c), kMillimetersPerMeter);
      if (!(w > 0.0f)) {
        continue;
      }
      Point3 pt = backproject_pixel(p, static_cast<double>(c), static_cast<double>(r), w);
      pt.rgba = pack_rgba(color.at(r, c));
      sink(pt);
    }
  }
}

template<typename DepthT>
void check_inputs(
  const ProjectionMatrix & p, const ImageView<DepthT> & depth, const ImageView<Rgb> & color)
{
  require_same_size(depth, color);
  if (depth.data.size() != depth.width * depth.height ||
    color.data.size() != color.width * color.height)
  {
    throw Error(Errc::dimension_mismatch, "image buffer does not match its dimensions");
  }
  if (!p.valid()) {
    throw Error(Errc::missing_calibration, "projection matrix needs fx > 0 and fy > 0");
  }
}

}  // namespace detail

/// Back-projects every valid pixel straight into `out`, in row-major pixel
/// order, and returns the number of points written. Depth may be meters
/// (float) or millimeters (uint16).
template<typename DepthT>
std::size_t generate_pointcloud_into(
  const ProjectionMatrix & p, const ImageView<DepthT> & depth, const ImageView<Rgb> & color,
  std::span<Point3> out)
{
  detail::check_inputs(p, depth, color);
  std::size_t n = 0;
  detail::backproject_rows(
    p, depth, color, 0, depth.height, [&](const Point3 & pt) {
      if (n == out.size()) {
        throw Error(Errc::message_too_large, "point buffer too small");
      }
      out[n++] = pt;
    });
  return n;
}

/// Row-partitioned across `threads`; partitions are concatenated in row
/// order so the result equals the sequential one.
template<typename DepthT>
PointCloud generate_pointcloud(
  const ProjectionMatrix & p, const ImageView<DepthT> & depth, const ImageView<Rgb> & color,
  unsigned threads = 1)
{
  detail::check_inputs(p, depth, color);
  PointCloud cloud;
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(depth.height)));
  if (threads <= 1) {
    cloud.points.reserve(depth.data.size());
    detail::backproject_rows(
      p, depth, color, 0, depth.height, [&](const Point3 & pt) {cloud.points.push_back(pt);});
    return cloud;
  }
  std::vector<std::vector<Point3>> parts(threads);
  std::vector<std::thread> workers;
  const std::size_t rows_per = (depth.height + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = std::min(depth.height, t * rows_per);
    const std::size_t end = std::min(depth.height, begin + rows_per);
    workers.emplace_back(
      [&, t, begin, end] {
        detail::backproject_rows(
          p, depth, color, begin, end, [&](const Point3 & pt) {parts[t].push_back(pt);});
      });
  }
  for (auto & w : workers) {
    w.join();
  }
  for (auto & part : parts) {
    cloud.points.insert(cloud.points.end(), part.begin(), part.end());
  }
  return cloud;
}

inline PointCloud generate_pointcloud(
  const ProjectionMatrix & p, const DepthImage & depth, const ColorImage & color,
  unsigned threads = 1)
{
  return generate_pointcloud(p, depth.view(), color.view(), threads);
}

// --- serialization ---------------------------------------------------------

/// Size of the packed point block: 16 bytes per point.
constexpr std::size_t serialized_size(std::size_t point_count) noexcept
{
  return point_count * sizeof(Point3);
}

/// Wire header preceding the point block: u32 count, u32 frame, 8 zero bytes.
inline constexpr std::size_t kCloudHeaderSize = 16;

constexpr std::size_t cloud_wire_size(std::size_t point_count) noexcept
{
  return kCloudHeaderSize + serialized_size(point_count);
}

inline std::vector<std::byte> serialize_points(const PointCloud & cloud)
{
  std::vector<std::byte> out(serialized_size(cloud.size()));
  if (!out.empty()) {
    std::memcpy(out.data(), cloud.points.data(), out.size());
  }
  return out;
}

inline void write_cloud_header(std::span<std::byte> out, std::uint32_t count, CloudFrame frame)
{
  if (out.size() < kCloudHeaderSize) {
    throw Error(Errc::message_too_large, "buffer too small for cloud header");
  }
  const auto f = static_cast<std::uint32_t>(frame);
  std::memset(out.data(), 0, kCloudHeaderSize);
  std::memcpy(out.data(), &count, 4);
  std::memcpy(out.data() + 4, &f, 4);
}

inline std::size_t encode_cloud(const PointCloud & cloud, std::span<std::byte> out)
{
  const std::size_t n = cloud_wire_size(cloud.size());
  if (out.size() < n) {
    throw Error(Errc::message_too_large, "buffer too small for point cloud");
  }
  write_cloud_header(out, static_cast<std::uint32_t>(cloud.size()), cloud.frame);
  if (!cloud.points.empty()) {
    std::memcpy(out.data() + kCloudHeaderSize, cloud.points.data(), serialized_size(cloud.size()));
  }
  return n;
}

/// Zero-copy view over an encoded cloud. `bytes` must be 4-byte aligned.
struct CloudView
{
  CloudFrame frame {CloudFrame::camera};
  std::span<const Point3> points;
};

inline CloudView view_cloud(std::span<const std::byte> bytes)
{
  if (bytes.size() < kCloudHeaderSize) {
    throw Error(Errc::dimension_mismatch, "truncated cloud header");
  }
  std::uint32_t count = 0;
  std::uint32_t frame = 0;
  std::memcpy(&count, bytes.data(), 4);
  std::memcpy(&frame, bytes.data() + 4, 4);
  if (bytes.size() < cloud_wire_size(count) || frame > 1) {
    throw Error(Errc::dimension_mismatch, "truncated or malformed cloud");
  }
  if (reinterpret_cast<std::uintptr_t>(bytes.data()) % alignof(Point3) != 0) {
    throw Error(Errc::dimension_mismatch, "cloud buffer is misaligned");
  }
  return {static_cast<CloudFrame>(frame),
    {reinterpret_cast<const Point3 *>(bytes.data() + kCloudHeaderSize), count}};
}

inline PointCloud decode_cloud(std::span<const std::byte> bytes)
{
  std::uint32_t count = 0;
  std::uint32_t frame = 0;
  if (bytes.size() < kCloudHeaderSize) {
    throw Error(Errc::dimension_mismatch, "truncated cloud header");
  }
  std::memcpy(&count, bytes.data(), 4);
  std::memcpy(&frame, bytes.data() + 4, 4);
  if (bytes.size() < cloud_wire_size(count) || frame > 1) {
    throw Error(Errc::dimension_mismatch, "truncated or malformed cloud");
  }
  PointCloud cloud;
  cloud.frame = static_cast<CloudFrame>(frame);
  cloud.points.resize(count);
  if (count > 0) {
    std::memcpy(cloud.points.data(), bytes.data() + kCloudHeaderSize, serialized_size(count));
  }
  return cloud;
}

// --- calibration -------------------------------------------------------------

/// Reads fx, fy, cx, cy, tx, ty from `j["calibration"]` (or from `j` itself).
inline ProjectionMatrix parse_projection(const nlohmann::json & j)
{
  const nlohmann::json & c = j.contains("calibration") ? j.at("calibration") : j;
  ProjectionMatrix p;
  try {
    p.fx = c.at("fx").get<double>();
    p.fy = c.at("fy").get<double>();
    p.cx = c.at("cx").get<double>();
    p.cy = c.at("cy").get<double>();
    p.tx = c.value("tx", 0.0);
    p.ty = c.value("ty", 0.0);
  } catch (const nlohmann::json::exception & e) {
    throw Error(Errc::missing_calibration, e.what());
  }
  if (!p.valid()) {
    throw Error(Errc::missing_calibration, "calibration needs finite values with fx, fy > 0");
  }
  return p;
}

/// Loads the projection matrix once and serves the cached copy afterwards;
/// the file is not consulted again for the lifetime of the object.
class CameraInfoSource
{
public:
  explicit CameraInfoSource(std::filesystem::path path)
  : path_(std::move(path)) {}

  const ProjectionMatrix & fetch()
  {
    if (!cached_) {
      std::ifstream in(path_);
      if (!in) {
        throw Error(Errc::missing_calibration, "cannot read " + path_.string());
      }
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception & e) {
        throw Error(Errc::missing_calibration, e.what());
      }
      cached_ = parse_projection(j);
      ++reads_;
    }
    return *cached_;
  }

  std::size_t reads() const noexcept {return reads_;}

private:
  std::filesystem::path path_;
  std::optional<ProjectionMatrix> cached_;
  std::size_t reads_ {0};
};

}  // namespace adunit

#endif  // ADUNIT__POINTCLOUD_HPP_
