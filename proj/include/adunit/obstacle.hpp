#ifndef ADUNIT__OBSTACLE_HPP_
#define ADUNIT__OBSTACLE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <thread>
#include <vector>

#include "adunit/error.hpp"
#include "adunit/pointcloud.hpp"

namespace adunit
{

/// p' = R p + t. Rotation is row-major.
struct RigidTransform
{
  std::array<double, 9> rotation {1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<double, 3> translation {0, 0, 0};

  static RigidTransform identity() {return {};}

  /// Camera optical frame (x right, y down, z forward) to a base frame
  /// (x forward, y left, z up), camera `height` meters above the ground.
  static RigidTransform camera_to_base(double height)
  {
    RigidTransform t;
    t.rotation = {0, 0, 1, -1, 0, 0, 0, -1, 0};
    t.translation = {0, 0, height};
    return t;
  }

  bool valid(double tol = 1e-9) const noexcept
  {
    const auto & r = rotation;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double dot = 0.0;
        for (int k = 0; k < 3; ++k) {
          dot += r[k * 3 + i] * r[k * 3 + j];
        }
        if (std::abs(dot - (i == j ? 1.0 : 0.0)) > tol) {
          return false;
        }
      }
    }
    const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
      r[2] * (r[3] * r[7] - r[4] * r[6]);
    return std::abs(det - 1.0) <= tol;
  }

  Point3 apply(const Point3 & p) const noexcept
  {
    const auto & r = rotation;
    const double x = p.x;
    const double y = p.y;
    const double z = p.z;
    Point3 out;
    out.x = static_cast<float>(r[0] * x + r[1] * y + r[2] * z + translation[0]);
    out.y = static_cast<float>(r[3] * x + r[4] * y + r[5] * z + translation[1]);
    out.z = static_cast<float>(r[6] * x + r[7] * y + r[8] * z + translation[2]);
    out.rgba = p.rgba;
    return out;
  }
};

/// Half-open volume in the base frame.
struct ObstacleBox
{
  double x_min {0.0};
  double x_max {3.25};
  double y_min {-2.25};
  double y_max {2.25};
  double z_min {0.05};
  double z_max {0.5};

  bool valid() const noexcept {return x_min < x_max && y_min < y_max && z_min < z_max;}

  bool contains(const Point3 & p) const noexcept
  {
    return p.x >= x_min && p.x < x_max && p.y >= y_min && p.y < y_max && p.z >= z_min &&
           p.z < z_max;
  }
};

inline constexpr std::size_t kDefaultGridRows = 13;
inline constexpr std::size_t kDefaultGridCols = 18;
inline constexpr std::uint8_t kDefaultMinCount = 3;

/// Ground-plane cell counts, row = forward, col = lateral; 8-bit saturating.
struct ObstacleGrid
{
  std::uint32_t rows {0};
  std::uint32_t cols {0};
  float cell_size {0.0f};
  std::vector<std::uint8_t> counts;

  std::uint8_t at(std::size_t r, std::size_t c) const {return counts[r * cols + c];}
  friend bool operator==(const ObstacleGrid &, const ObstacleGrid &) = default;
};

inline PointCloud transform_cloud(const PointCloud & cloud, const RigidTransform & t)
{
  if (cloud.frame != CloudFrame::camera) {
    throw Error(Errc::frame_mismatch, "cloud is already in the base frame");
  }
  PointCloud out;
  out.frame = CloudFrame::base;
  out.points.reserve(cloud.size());
  for (const auto & p : cloud.points) {
    out.points.push_back(t.apply(p));
  }
  return out;
}

inline PointCloud filter_box(const PointCloud & cloud, const ObstacleBox & box)
{
  PointCloud out;
  out.frame = cloud.frame;
  for (const auto & p : cloud.points) {
    if (box.contains(p)) {
      out.points.push_back(p);
    }
  }
  return out;
}

namespace detail
{

struct CellMapper
{
  double x_min;
  double y_min;
  double cell_x;
  double cell_y;
  std::size_t rows;
  std::size_t cols;

  CellMapper(const ObstacleBox & box, std::size_t r, std::size_t c)
  : x_min(box.x_min), y_min(box.y_min),
    cell_x((box.x_max - box.x_min) / static_cast<double>(r)),
    cell_y((box.y_max - box.y_min) / static_cast<double>(c)), rows(r), cols(c) {}

  // Flat cell index, or -1 when the point falls outside the grid.
  std::ptrdiff_t index(const Point3 & p) const noexcept
  {
    const double fr = std::floor((static_cast<double>(p.x) - x_min) / cell_x);
    const double fc = std::floor((static_cast<double>(p.y) - y_min) / cell_y);
    if (!(fr >= 0.0 && fc >= 0.0 && fr < static_cast<double>(rows) &&
      fc < static_cast<double>(cols)))
    {
      return -1;
    }
    return static_cast<std::ptrdiff_t>(fr) * static_cast<std::ptrdiff_t>(cols) +
           static_cast<std::ptrdiff_t>(fc);
  }
};

inline ObstacleGrid saturate(
  const std::vector<std::uint32_t> & raw, std::size_t rows, std::size_t cols, float cell)
{
  ObstacleGrid grid;
  grid.rows = static_cast<std::uint32_t>(rows);
  grid.cols = static_cast<std::uint32_t>(cols);
  grid.cell_size = cell;
  grid.counts.resize(raw.size());
  std::transform(
    raw.begin(), raw.end(), grid.counts.begin(),
    [](std::uint32_t n) {return static_cast<std::uint8_t>(std::min<std::uint32_t>(n, 255));});
  return grid;
}

inline void check_grid_args(const ObstacleBox & box, std::size_t rows, std::size_t cols)
{
  if (!box.valid() || rows == 0 || cols == 0) {
    throw Error(Errc::invalid_config, "obstacle box must be non-empty and grid at least 1x1");
  }
}

}  // namespace detail

/// Projects box-filtered points onto the xy-plane and counts them per cell.
/// With several threads each partition accumulates privately before the merge.
inline ObstacleGrid rasterize_grid(
  std::span<const Point3> points, const ObstacleBox & box, std::size_t rows = kDefaultGridRows,
  std::size_t cols = kDefaultGridCols, unsigned threads = 1)
{
  detail::check_grid_args(box, rows, cols);
  const detail::CellMapper map(box, rows, cols);
  std::vector<std::uint32_t> raw(rows * cols, 0);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(points.size() / 4096)));
  if (threads <= 1) {
    for (const auto & p : points) {
      if (const auto i = map.index(p); i >= 0) {
        ++raw[static_cast<std::size_t>(i)];
      }
    }
  } else {
    std::vector<std::vector<std::uint32_t>> partial(threads, std::vector<std::uint32_t>(raw.size()));
    std::vector<std::thread> workers;
    const std::size_t per = (points.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const auto part = points.subspan(
        std::min(points.size(), t * per),
        std::min(per, points.size() - std::min(points.size(), t * per)));
      workers.emplace_back(
        [&map, &acc = partial[t], part] {
          for (const auto & p : part) {
            if (const auto i = map.index(p); i >= 0) {
              ++acc[static_cast<std::size_t>(i)];
            }
          }
        });
    }
    for (auto & w : workers) {
      w.join();
    }
    for (const auto & acc : partial) {
      for (std::size_t i = 0; i < raw.size(); ++i) {
        raw[i] += acc[i];
      }
    }
  }
  return detail::saturate(raw, rows, cols, static_cast<float>(map.cell_x));
}

inline ObstacleGrid rasterize_grid(
  const PointCloud & cloud, const ObstacleBox & box, std::size_t rows = kDefaultGridRows,
  std::size_t cols = kDefaultGridCols, unsigned threads = 1)
{
  return rasterize_grid(std::span<const Point3>(cloud.points), box, rows, cols, threads);
}

/// transform, box filter and rasterization fused into one pass over
/// camera-frame points; equal to the three steps applied in sequence.
inline ObstacleGrid detect_obstacles(
  std::span<const Point3> camera_points, const RigidTransform & t, const ObstacleBox & box,
  std::size_t rows = kDefaultGridRows, std::size_t cols = kDefaultGridCols)
{
  detail::check_grid_args(box, rows, cols);
  const detail::CellMapper map(box, rows, cols);
  std::vector<std::uint32_t> raw(rows * cols, 0);
  for (const auto & cp : camera_points) {
    const Point3 p = t.apply(cp);
    if (!box.contains(p)) {
      continue;
    }
    if (const auto i = map.index(p); i >= 0) {
      ++raw[static_cast<std::size_t>(i)];
    }
  }
  return detail::saturate(raw, rows, cols, static_cast<float>(map.cell_x));
}

/// Column range [begin, end) covering the car's path.
struct Footprint
{
  std::size_t col_begin {7};
  std::size_t col_end {11};
};

/// True iff a footprint cell holds at least `min_count` points. The range is
/// clipped to the grid.
inline bool obstacle_in_path(
  const ObstacleGrid & grid, Footprint footprint, std::uint8_t min_count = kDefaultMinCount)
{
  const std::size_t end = std::min<std::size_t>(footprint.col_end, grid.cols);
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = footprint.col_begin; c < end; ++c) {
      if (grid.at(r, c) >= min_count) {
        return true;
      }
    }
  }
  return false;
}

/// Commanded speed for the controller: zero when the path is blocked.
inline double commanded_speed(
  const ObstacleGrid & grid, Footprint footprint, std::uint8_t min_count, double cruise_speed)
{
  return obstacle_in_path(grid, footprint, min_count) ? 0.0 : cruise_speed;
}

// --- wire format: u32 rows, u32 cols, f32 cell_size, rows*cols count bytes --

inline constexpr std::size_t kGridHeaderSize = 12;

inline std::size_t grid_wire_size(const ObstacleGrid & grid) noexcept
{
  return kGridHeaderSize + grid.counts.size();
}

inline std::size_t encode_grid(const ObstacleGrid & grid, std::span<std::byte> out)
{
  const std::size_t n = grid_wire_size(grid);
  if (out.size() < n) {
    throw Error(Errc::message_too_large, "buffer too small for grid");
  }
  std::memcpy(out.data(), &grid.rows, 4);
  std::memcpy(out.data() + 4, &grid.cols, 4);
  std::memcpy(out.data() + 8, &grid.cell_size, 4);
  if (!grid.counts.empty()) {
    std::memcpy(out.data() + kGridHeaderSize, grid.counts.data(), grid.counts.size());
  }
  return n;
}

inline ObstacleGrid decode_grid(std::span<const std::byte> bytes)
{
  if (bytes.size() < kGridHeaderSize) {
    throw Error(Errc::dimension_mismatch, "truncated grid header");
  }
  ObstacleGrid grid;
  std::memcpy(&grid.rows, bytes.data(), 4);
  std::memcpy(&grid.cols, bytes.data() + 4, 4);
  std::memcpy(&grid.cell_size, bytes.data() + 8, 4);
  const std::size_t cells = std::size_t {grid.rows} * grid.cols;
  if (bytes.size() < kGridHeaderSize + cells) {
    throw Error(Errc::dimension_mismatch, "truncated grid");
  }
  grid.counts.resize(cells);
  if (cells > 0) {
    std::memcpy(grid.counts.data(), bytes.data() + kGridHeaderSize, cells);
  }
  return grid;
}

}  // namespace adunit

#endif  // ADUNIT__OBSTACLE_HPP_
