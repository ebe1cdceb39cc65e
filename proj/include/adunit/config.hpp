#ifndef ADUNIT__CONFIG_HPP_
#define ADUNIT__CONFIG_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "adunit/error.hpp"
#include "adunit/lane/lane.hpp"
#include "adunit/obstacle.hpp"
#include "adunit/pointcloud.hpp"
#include "adunit/transport/segment_layout.hpp"

// Pipeline configuration, one JSON document. Schema: docs/config.md.

namespace adunit
{

struct CameraConfig
{
  std::size_t width {640};
  std::size_t height {480};
  double mount_height {0.2};
};

struct ObstacleConfig
{
  RigidTransform transform {RigidTransform::camera_to_base(0.2)};
  ObstacleBox box;
  std::size_t rows {kDefaultGridRows};
  std::size_t cols {kDefaultGridCols};
  Footprint footprint;
  std::uint8_t min_count {kDefaultMinCount};
};

struct TransportConfig
{
  std::uint32_t pool_capacity {24};
  std::uint32_t queue_depth {8};
};

/// Trapezoid in the camera image that maps onto the full bird's-eye frame.
inline lane::Homography default_homography(std::size_t width = 640, std::size_t height = 480)
{
  const double w = static_cast<double>(width);
  const double h = static_cast<double>(height);
  return lane::Homography::from_points(
    {{{0.34375 * w, 0.5833333333333334 * h}, {0.65625 * w, 0.5833333333333334 * h}, {w, h},
      {0.0, h}}},
    {{{0.0, 0.0}, {w, 0.0}, {w, h}, {0.0, h}}});
}

struct Config
{
  ProjectionMatrix calibration {554.3, 554.3, 320.0, 240.0, 0.0, 0.0};
  CameraConfig camera;
  ObstacleConfig obstacle;
  lane::LaneConfig lane {lane::ColorThresholds {}, default_homography(), lane::TrajectoryFrame {}};
  TransportConfig transport;

  void validate() const
  {
    if (!calibration.valid()) {
      throw Error(Errc::missing_calibration, "calibration needs fx, fy > 0");
    }
    if (camera.width == 0 || camera.height == 0) {
      throw Error(Errc::invalid_config, "camera size must be positive");
    }
    if (!obstacle.transform.valid()) {
      throw Error(Errc::invalid_config, "obstacle transform rotation is not orthonormal");
    }
    if (!obstacle.box.valid() || obstacle.rows == 0 || obstacle.cols == 0) {
      throw Error(Errc::invalid_config, "obstacle box/grid is empty");
    }
    if (obstacle.footprint.col_begin >= obstacle.footprint.col_end ||
      obstacle.footprint.col_end > obstacle.cols)
    {
      throw Error(Errc::invalid_config, "footprint columns must lie within the grid");
    }
    if (!lane.thresholds.valid()) {
      throw Error(Errc::invalid_config, "yellow hue range invalid");
    }
    (void)lane.homography.inverse();
    if (!(lane.frame.scale > 0.0)) {
      throw Error(Errc::invalid_config, "lane scale must be positive");
    }
    if (transport.queue_depth == 0 ||
      transport.pool_capacity < transport::kMaxLoans + transport.queue_depth)
    {
      throw Error(Errc::invalid_config, "pool_capacity must be at least 8 + queue_depth");
    }
  }
};

namespace detail
{

template<typename T, std::size_t N>
std::array<T, N> get_array(const nlohmann::json & j, const char * key)
{
  const auto & a = j.at(key);
  if (!a.is_array() || a.size() != N) {
    throw Error(Errc::invalid_config, std::string(key) + " must have " + std::to_string(N) + " entries");
  }
  std::array<T, N> out {};
  for (std::size_t i = 0; i < N; ++i) {
    out[i] = a[i].get<T>();
  }
  return out;
}

}  // namespace detail

inline Config config_from_json(const nlohmann::json & j)
{
  Config c;
  c.calibration = parse_projection(j);
  try {
    if (j.contains("camera")) {
      const auto & cam = j.at("camera");
      c.camera.width = cam.value("width", c.camera.width);
      c.camera.height = cam.value("height", c.camera.height);
      c.camera.mount_height = cam.value("mount_height", c.camera.mount_height);
      c.obstacle.transform = RigidTransform::camera_to_base(c.camera.mount_height);
    }
    if (j.contains("obstacle")) {
      const auto & o = j.at("obstacle");
      if (o.contains("transform")) {
        c.obstacle.transform.rotation = detail::get_array<double, 9>(o.at("transform"), "rotation");
        c.obstacle.transform.translation =
          detail::get_array<double, 3>(o.at("transform"), "translation");
      }
      if (o.contains("box")) {
        const auto & b = o.at("box");
        c.obstacle.box = {b.at("x_min").get<double>(), b.at("x_max").get<double>(),
          b.at("y_min").get<double>(), b.at("y_max").get<double>(), b.at("z_min").get<double>(),
          b.at("z_max").get<double>()};
      }
      c.obstacle.rows = o.value("rows", c.obstacle.rows);
      c.obstacle.cols = o.value("cols", c.obstacle.cols);
      if (o.contains("footprint_cols")) {
        const auto f = detail::get_array<std::size_t, 2>(o, "footprint_cols");
        c.obstacle.footprint = {f[0], f[1]};
      }
      c.obstacle.min_count = o.value("min_count", c.obstacle.min_count);
    }
    if (j.contains("lane")) {
      const auto & l = j.at("lane");
      if (l.contains("thresholds")) {
        const auto & t = l.at("thresholds");
        auto & th = c.lane.thresholds;
        if (t.contains("white")) {
          th.white.s_max = t.at("white").value("s_max", th.white.s_max);
          th.white.v_min = t.at("white").value("v_min", th.white.v_min);
        }
        if (t.contains("yellow")) {
          const auto & y = t.at("yellow");
          th.yellow.h_min = y.value("h_min", th.yellow.h_min);
          th.yellow.h_max = y.value("h_max", th.yellow.h_max);
          th.yellow.s_min = y.value("s_min", th.yellow.s_min);
          th.yellow.v_min = y.value("v_min", th.yellow.v_min);
        }
      }
      if (l.contains("homography")) {
        c.lane.homography.m = detail::get_array<double, 9>(l, "homography");
      } else {
        c.lane.homography = default_homography(c.camera.width, c.camera.height);
      }
      c.lane.frame.shift = l.value("shift", static_cast<double>(c.camera.width) / 2.0);
      c.lane.frame.scale = l.value("scale", c.lane.frame.scale);
    } else {
      c.lane.homography = default_homography(c.camera.width, c.camera.height);
      c.lane.frame.shift = static_cast<double>(c.camera.width) / 2.0;
    }
    c.lane.frame.image_height = static_cast<double>(c.camera.height);
    if (j.contains("transport")) {
      const auto & t = j.at("transport");
      c.transport.pool_capacity = t.value("pool_capacity", c.transport.pool_capacity);
      c.transport.queue_depth = t.value("queue_depth", c.transport.queue_depth);
    }
  } catch (const nlohmann::json::exception & e) {
    throw Error(Errc::invalid_config, e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const Config & c)
{
  nlohmann::json j;
  j["calibration"] = {{"fx", c.calibration.fx}, {"fy", c.calibration.fy},
    {"cx", c.calibration.cx}, {"cy", c.calibration.cy}, {"tx", c.calibration.tx},
    {"ty", c.calibration.ty}};
  j["camera"] = {{"width", c.camera.width}, {"height", c.camera.height},
    {"mount_height", c.camera.mount_height}};
  const auto & o = c.obstacle;
  j["obstacle"] = {
    {"transform", {{"rotation", o.transform.rotation}, {"translation", o.transform.translation}}},
    {"box", {{"x_min", o.box.x_min}, {"x_max", o.box.x_max}, {"y_min", o.box.y_min},
      {"y_max", o.box.y_max}, {"z_min", o.box.z_min}, {"z_max", o.box.z_max}}},
    {"rows", o.rows},
    {"cols", o.cols},
    {"footprint_cols", {o.footprint.col_begin, o.footprint.col_end}},
    {"min_count", o.min_count}};
  const auto & th = c.lane.thresholds;
  j["lane"] = {
    {"thresholds",
      {{"white", {{"s_max", th.white.s_max}, {"v_min", th.white.v_min}}},
        {"yellow", {{"h_min", th.yellow.h_min}, {"h_max", th.yellow.h_max},
          {"s_min", th.yellow.s_min}, {"v_min", th.yellow.v_min}}}}},
    {"homography", c.lane.homography.m},
    {"shift", c.lane.frame.shift},
    {"scale", c.lane.frame.scale}};
  j["transport"] = {{"pool_capacity", c.transport.pool_capacity},
    {"queue_depth", c.transport.queue_depth}};
  return j;
}

inline Config load_config(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::missing_calibration, "cannot read config " + path.string());
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception & e) {
    throw Error(Errc::invalid_config, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace adunit

#endif  // ADUNIT__CONFIG_HPP_
