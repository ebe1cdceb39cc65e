#ifndef ADUNIT__IMAGE_HPP_
#define ADUNIT__IMAGE_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "adunit/error.hpp"

namespace adunit
{

struct Rgb
{
  std::uint8_t r {0};
  std::uint8_t g {0};
  std::uint8_t b {0};

  friend bool operator==(const Rgb &, const Rgb &) = default;
};
static_assert(sizeof(Rgb) == 3);

/// Non-owning row-major view.
template<typename T>
struct ImageView
{
  std::size_t width {0};
  std::size_t height {0};
  std::span<const T> data;

  const T & at(std::size_t row, std::size_t col) const {return data[row * width + col];}
};

/// Owning row-major image.
template<typename T>
struct Image
{
  std::size_t width {0};
  std::size_t height {0};
  std::vector<T> data;

  Image() = default;
  Image(std::size_t w, std::size_t h, T fill = T {})
  : width(w), height(h), data(w * h, fill) {}

  T & at(std::size_t row, std::size_t col) {return data[row * width + col];}
  const T & at(std::size_t row, std::size_t col) const {return data[row * width + col];}
  ImageView<T> view() const {return {width, height, data};}

  friend bool operator==(const Image &, const Image &) = default;
};

/// Depth in meters; 0 marks an invalid pixel.
using DepthImage = Image<float>;
using ColorImage = Image<Rgb>;
/// Depth as delivered by the camera: millimeters.
using DepthImageMm = Image<std::uint16_t>;

inline constexpr float kMillimetersPerMeter = 1000.0f;

inline float depth_from_mm(std::uint16_t mm) noexcept
{
  return static_cast<float>(mm) / kMillimetersPerMeter;
}

inline DepthImage depth_from_mm(const ImageView<std::uint16_t> & mm)
{
  DepthImage out(mm.width, mm.height);
  for (std::size_t i = 0; i < mm.data.size(); ++i) {
    out.data[i] = depth_from_mm(mm.data[i]);
  }
  return out;
}

template<typename A, typename B>
void require_same_size(const A & a, const B & b)
{
  if (a.width != b.width || a.height != b.height) {
    throw Error(Errc::dimension_mismatch, "image dimensions differ");
  }
}

}  // namespace adunit

#endif  // ADUNIT__IMAGE_HPP_
