#ifndef ADUNIT__LANE__LANE_HPP_
#define ADUNIT__LANE__LANE_HPP_

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "adunit/error.hpp"
#include "adunit/image.hpp"
#include "adunit/lane/polyfit.hpp"

namespace adunit::lane
{

// --- colour space ------------------------------------------------------------

/// 8-bit HSV: H in [0, 180), S and V in [0, 256).
struct Hsv
{
  std::uint8_t h {0};
  std::uint8_t s {0};
  std::uint8_t v {0};

  friend bool operator==(const Hsv &, const Hsv &) = default;
};

using HsvImage = Image<Hsv>;

namespace detail
{

// round(num / den) with halves rounded up, den > 0.
constexpr long round_div(long num, long den) noexcept
{
  const long n = 2 * num + den;
  const long d = 2 * den;
  return n >= 0 ? n / d : -((-n + d - 1) / d);
}

}  // namespace detail

/// Exact integer conversion; hue is degrees / 2, ties round up.
constexpr Hsv rgb_to_hsv(Rgb px) noexcept
{
  const int r = px.r;
  const int g = px.g;
  const int b = px.b;
  const int v = std::max(r, std::max(g, b));
  const int mn = std::min(r, std::min(g, b));
  const int d = v - mn;
  Hsv out;
  out.v = static_cast<std::uint8_t>(v);
  out.s = v == 0 ? 0 : static_cast<std::uint8_t>(detail::round_div(255L * d, v));
  if (d == 0) {
    return out;
  }
  long num = 0;
  if (v == r) {
    num = 30L * (g - b);
  } else if (v == g) {
    num = 60L * d + 30L * (b - r);
  } else {
    num = 120L * d + 30L * (r - g);
  }
  long h = detail::round_div(num, d);
  if (h < 0) {
    h += 180;
  }
  if (h >= 180) {
    h -= 180;
  }
  out.h = static_cast<std::uint8_t>(h);
  return out;
}

inline HsvImage rgb_to_hsv(const ImageView<Rgb> & image)
{
  HsvImage out(image.width, image.height);
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    out.data[i] = rgb_to_hsv(image.data[i]);
  }
  return out;
}

inline HsvImage rgb_to_hsv(const ColorImage & image) {return rgb_to_hsv(image.view());}

// --- thresholding --------------------------------------------------------------

struct WhiteThreshold
{
  std::uint8_t s_max {60};
  std::uint8_t v_min {200};
};

struct YellowThreshold
{
  std::uint8_t h_min {20};
  std::uint8_t h_max {35};
  std::uint8_t s_min {80};
  std::uint8_t v_min {80};
};

struct ColorThresholds
{
  WhiteThreshold white;
  YellowThreshold yellow;

  bool valid() const noexcept {return yellow.h_min <= yellow.h_max && yellow.h_max < 180;}
};

/// Grayscale encoding of the lane mask.
enum class LaneLabel : std::uint8_t
{
  none = 0,
  yellow = 127,
  white = 255,
};

using LaneMask = Image<LaneLabel>;

enum class LaneColor
{
  white,
  yellow,
};

constexpr LaneLabel classify(const Hsv & p, const ColorThresholds & t) noexcept
{
  if (p.s <= t.white.s_max && p.v >= t.white.v_min) {
    return LaneLabel::white;
  }
  if (p.h >= t.yellow.h_min && p.h <= t.yellow.h_max && p.s >= t.yellow.s_min &&
    p.v >= t.yellow.v_min)
  {
    return LaneLabel::yellow;
  }
  return LaneLabel::none;
}

inline LaneMask threshold_colors(const HsvImage & image, const ColorThresholds & t)
{
  if (!t.valid()) {
    throw Error(Errc::invalid_config, "yellow hue range must satisfy h_min <= h_max < 180");
  }
  LaneMask out(image.width, image.height);
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    out.data[i] = classify(image.data[i], t);
  }
  return out;
}

// --- bird's-eye warp -----------------------------------------------------------

/// Row-major 3x3 projective map acting on (col, row, 1).
struct Homography
{
  std::array<double, 9> m {1, 0, 0, 0, 1, 0, 0, 0, 1};

  double det() const noexcept
  {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  Homography inverse() const
  {
    const double d = det();
    if (!(std::abs(d) > 1e-12) || !std::isfinite(d)) {
      throw Error(Errc::singular_homography, "homography is not invertible");
    }
    Homography inv;
    inv.m = {
      (m[4] * m[8] - m[5] * m[7]) / d, (m[2] * m[7] - m[1] * m[8]) / d,
      (m[1] * m[5] - m[2] * m[4]) / d,
      (m[5] * m[6] - m[3] * m[8]) / d, (m[0] * m[8] - m[2] * m[6]) / d,
      (m[2] * m[3] - m[0] * m[5]) / d,
      (m[3] * m[7] - m[4] * m[6]) / d, (m[1] * m[6] - m[0] * m[7]) / d,
      (m[0] * m[4] - m[1] * m[3]) / d};
    return inv;
  }

  struct Mapped
  {
    double col;
    double row;
    double w;
  };

  Mapped apply(double col, double row) const noexcept
  {
    const double w = m[6] * col + m[7] * row + m[8];
    return {(m[0] * col + m[1] * row + m[2]) / w, (m[3] * col + m[4] * row + m[5]) / w, w};
  }

  /// Map taking four source points onto four destination points, each (col, row).
  static Homography from_points(
    const std::array<std::array<double, 2>, 4> & src,
    const std::array<std::array<double, 2>, 4> & dst)
  {
    std::vector<double> a(64, 0.0);
    std::vector<double> b(8, 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
      const double x = src[i][0];
      const double y = src[i][1];
      const double u = dst[i][0];
      const double v = dst[i][1];
      double * r0 = &a[(2 * i) * 8];
      double * r1 = &a[(2 * i + 1) * 8];
      r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y;
      r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y;
      b[2 * i] = u;
      b[2 * i + 1] = v;
    }
    std::vector<double> h;
    try {
      h = detail::gauss_solve(std::move(a), std::move(b));
    } catch (const Error &) {
      throw Error(Errc::singular_homography, "degenerate point correspondences");
    }
    Homography out {{h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0}};
    // Same mapping either sign; pick the one with w > 0 on the source quad.
    if (out.apply(src[0][0], src[0][1]).w < 0.0) {
      for (auto & v : out.m) {
        v = -v;
      }
    }
    return out;
  }
};

/// Inverse mapping with nearest-neighbour sampling: destination (c, r) takes
/// the source label at round(H^-1 (c, r, 1)); outside the source is none.
inline LaneMask warp_birds_eye(
  const LaneMask & mask, const Homography & h, std::size_t out_width = 0,
  std::size_t out_height = 0)
{
  const Homography inv = h.inverse();
  out_width = out_width == 0 ? mask.width : out_width;
  out_height = out_height == 0 ? mask.height : out_height;
  LaneMask out(out_width, out_height);
  const auto w = static_cast<double>(mask.width);
  const auto hgt = static_cast<double>(mask.height);
  for (std::size_t r = 0; r < out_height; ++r) {
    for (std::size_t c = 0; c < out_width; ++c) {
      const auto p = inv.apply(static_cast<double>(c), static_cast<double>(r));
      if (!(p.w > 0.0)) {
        continue;
      }
      const double sc = std::floor(p.col + 0.5);
      const double sr = std::floor(p.row + 0.5);
      if (sc >= 0.0 && sr >= 0.0 && sc < w && sr < hgt) {
        out.at(r, c) = mask.at(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc));
      }
    }
  }
  return out;
}

// --- lane selection and fitting --------------------------------------------------

struct LabelCounts
{
  std::size_t white {0};
  std::size_t yellow {0};
};

inline LabelCounts count_labels(const LaneMask & mask)
{
  LabelCounts n;
  for (auto l : mask.data) {
    n.white += l == LaneLabel::white;
    n.yellow += l == LaneLabel::yellow;
  }
  return n;
}

/// Colour with more pixels; white on a tie.
inline LaneColor select_lane_color(const LaneMask & mask)
{
  const auto n = count_labels(mask);
  if (n.white == 0 && n.yellow == 0) {
    throw Error(Errc::no_lane_pixels, "mask has neither white nor yellow pixels");
  }
  return n.yellow > n.white ? LaneColor::yellow : LaneColor::white;
}

inline constexpr std::size_t kLaneDegree = 2;
inline constexpr std::size_t kTrajectoryDegree = 3;
inline constexpr std::size_t kTrajectorySamples = 30;

inline std::vector<Sample> lane_pixels(const LaneMask & mask, LaneColor color)
{
  const LaneLabel want = color == LaneColor::white ? LaneLabel::white : LaneLabel::yellow;
  std::vector<Sample> pts;
  for (std::size_t r = 0; r < mask.height; ++r) {
    for (std::size_t c = 0; c < mask.width; ++c) {
      if (mask.at(r, c) == want) {
        pts.push_back({static_cast<double>(r), static_cast<double>(c)});
      }
    }
  }
  return pts;
}

/// Degree-2 fit of column as a function of row over the selected colour.
inline PolyCoeffs fit_lane(const LaneMask & mask, LaneColor color)
{
  const auto pts = lane_pixels(mask, color);
  if (pts.size() < kLaneDegree + 1 || detail::count_distinct_x(pts, kLaneDegree + 1) < kLaneDegree + 1) {
    throw Error(Errc::insufficient_pixels, "need 3 lane pixels on 3 distinct rows");
  }
  return polyfit(pts, kLaneDegree);
}

struct TrajectorySamples
{
  std::array<double, kTrajectorySamples> x {};
  std::array<double, kTrajectorySamples> y {};
};

/// x_i = i * height / 30, y_i = f_l(x_i).
inline TrajectorySamples sample_trajectory(const PolyCoeffs & lane, double image_height = 480.0)
{
  TrajectorySamples s;
  for (std::size_t i = 0; i < kTrajectorySamples; ++i) {
    s.x[i] = static_cast<double>(i) * image_height / static_cast<double>(kTrajectorySamples);
    s.y[i] = lane(s.x[i]);
  }
  return s;
}

/// Image-to-base mapping of trajectory samples: forward = scale * (height - x),
/// lateral = scale * (shift - y), positive to the left.
struct TrajectoryFrame
{
  double shift {320.0};
  double scale {0.005};
  double image_height {480.0};
};

inline std::vector<Sample> to_base_frame(const TrajectorySamples & s, const TrajectoryFrame & f)
{
  std::vector<Sample> pts(kTrajectorySamples);
  for (std::size_t i = 0; i < kTrajectorySamples; ++i) {
    pts[i] = {f.scale * (f.image_height - s.x[i]), f.scale * (f.shift - s.y[i])};
  }
  return pts;
}

/// Degree-3 target polynomial: lateral offset as a function of forward distance.
inline PolyCoeffs fit_trajectory(const TrajectorySamples & s, const TrajectoryFrame & f)
{
  return polyfit(to_base_frame(s, f), kTrajectoryDegree);
}

// --- full detector ---------------------------------------------------------------

struct LaneConfig
{
  ColorThresholds thresholds;
  Homography homography;
  TrajectoryFrame frame;
};

struct LaneResult
{
  bool valid {false};
  LaneColor color {LaneColor::white};
  PolyCoeffs lane;
  TrajectorySamples samples;
  PolyCoeffs trajectory;
  // Normal-equation residuals of the two fits.
  double lane_residual {0.0};
  double trajectory_residual {0.0};
};

/// HSV, threshold, warp, colour choice, lane fit, sampling and trajectory
/// refit. A frame without usable lane pixels yields valid == false.
inline LaneResult detect_lane(const ImageView<Rgb> & image, const LaneConfig & cfg)
{
  LaneResult out;
  const LaneMask mask = threshold_colors(rgb_to_hsv(image), cfg.thresholds);
  const LaneMask bird = warp_birds_eye(mask, cfg.homography);
  try {
    out.color = select_lane_color(bird);
    const auto pts = lane_pixels(bird, out.color);
    out.lane = fit_lane(bird, out.color);
    out.lane_residual = normal_equation_residual(pts, out.lane);
  } catch (const Error & e) {
    if (e.code() == Errc::no_lane_pixels || e.code() == Errc::insufficient_pixels ||
      e.code() == Errc::singular_system)
    {
      return out;
    }
    throw;
  }
  TrajectoryFrame frame = cfg.frame;
  frame.image_height = static_cast<double>(image.height);
  out.samples = sample_trajectory(out.lane, frame.image_height);
  const auto base = to_base_frame(out.samples, frame);
  out.trajectory = polyfit(base, kTrajectoryDegree);
  out.trajectory_residual = normal_equation_residual(base, out.trajectory);
  out.valid = true;
  return out;
}

// --- wire format: u32 degree, u32 valid, 4 x f64 coefficients (a_0 first) -------

inline constexpr std::size_t kTrajectoryWireSize = 40;

inline std::size_t encode_trajectory(const LaneResult & r, std::span<std::byte> out)
{
  if (out.size() < kTrajectoryWireSize) {
    throw Error(Errc::message_too_large, "buffer too small for trajectory");
  }
  const std::uint32_t degree = kTrajectoryDegree;
  const std::uint32_t valid = r.valid ? 1 : 0;
  std::array<double, kTrajectoryDegree + 1> a {};
  for (std::size_t i = 0; i < a.size() && i < r.trajectory.a.size(); ++i) {
    a[i] = r.trajectory.a[i];
  }
  std::memcpy(out.data(), &degree, 4);
  std::memcpy(out.data() + 4, &valid, 4);
  std::memcpy(out.data() + 8, a.data(), sizeof(a));
  return kTrajectoryWireSize;
}

struct TrajectoryMessage
{
  std::uint32_t degree {0};
  bool valid {false};
  std::array<double, kTrajectoryDegree + 1> coeffs {};
};

inline TrajectoryMessage decode_trajectory(std::span<const std::byte> bytes)
{
  if (bytes.size() < kTrajectoryWireSize) {
    throw Error(Errc::dimension_mismatch, "truncated trajectory");
  }
  TrajectoryMessage m;
  std::uint32_t valid = 0;
  std::memcpy(&m.degree, bytes.data(), 4);
  std::memcpy(&valid, bytes.data() + 4, 4);
  std::memcpy(m.coeffs.data(), bytes.data() + 8, sizeof(m.coeffs));
  m.valid = valid != 0;
  return m;
}

}  // namespace adunit::lane

#endif  // ADUNIT__LANE__LANE_HPP_
