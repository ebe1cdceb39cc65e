#ifndef ADUNIT__NETPBM_HPP_
#define ADUNIT__NETPBM_HPP_

#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <string>
#include <vector>

#include "adunit/error.hpp"
#include "adunit/image.hpp"

// Binary PGM (P5, 16-bit big-endian samples) for depth in millimeters and
// binary PPM (P6, 8-bit) for colour.

namespace adunit::netpbm
{

namespace detail
{

inline std::size_t read_header_value(std::istream & in)
{
  int c = in.get();
  for (;;) {
    while (c != EOF && std::isspace(c)) {
      c = in.get();
    }
    if (c == '#') {
      while (c != EOF && c != '\n') {
        c = in.get();
      }
      continue;
    }
    break;
  }
  if (c == EOF || !std::isdigit(c)) {
    throw Error(Errc::io_error, "malformed netpbm header");
  }
  std::size_t v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + static_cast<std::size_t>(c - '0');
    c = in.get();
  }
  // exactly one whitespace byte separates the header from the raster
  return v;
}

struct Header
{
  std::size_t width;
  std::size_t height;
  std::size_t maxval;
};

inline Header read_header(std::istream & in, const char * magic)
{
  char m[2] = {0, 0};
  in.read(m, 2);
  if (!in || m[0] != magic[0] || m[1] != magic[1]) {
    throw Error(Errc::io_error, std::string("expected netpbm magic ") + magic);
  }
  Header h {};
  h.width = read_header_value(in);
  h.height = read_header_value(in);
  h.maxval = read_header_value(in);
  if (h.width == 0 || h.height == 0 || h.maxval == 0 || h.maxval > 65535) {
    throw Error(Errc::io_error, "invalid netpbm dimensions");
  }
  return h;
}

inline std::ifstream open_in(const std::filesystem::path & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(Errc::io_error, "cannot open " + path.string());
  }
  return in;
}

inline std::ofstream open_out(const std::filesystem::path & path)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(Errc::io_error, "cannot write " + path.string());
  }
  return out;
}

}  // namespace detail

inline DepthImageMm read_pgm16(const std::filesystem::path & path)
{
  auto in = detail::open_in(path);
  const auto h = detail::read_header(in, "P5");
  if (h.maxval < 256) {
    throw Error(Errc::io_error, path.string() + ": depth PGM must be 16-bit");
  }
  DepthImageMm img(h.width, h.height);
  std::vector<unsigned char> raw(img.data.size() * 2);
  in.read(reinterpret_cast<char *>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) {
    throw Error(Errc::io_error, path.string() + ": truncated raster");
  }
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    img.data[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
  }
  return img;
}

inline void write_pgm16(const std::filesystem::path & path, const ImageView<std::uint16_t> & img)
{
  auto out = detail::open_out(path);
  out << "P5\n" << img.width << ' ' << img.height << "\n65535\n";
  std::vector<unsigned char> raw(img.data.size() * 2);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    raw[2 * i] = static_cast<unsigned char>(img.data[i] >> 8);
    raw[2 * i + 1] = static_cast<unsigned char>(img.data[i] & 0xFF);
  }
  out.write(reinterpret_cast<const char *>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) {
    throw Error(Errc::io_error, "short write to " + path.string());
  }
}

inline ColorImage read_ppm(const std::filesystem::path & path)
{
  auto in = detail::open_in(path);
  const auto h = detail::read_header(in, "P6");
  if (h.maxval != 255) {
    throw Error(Errc::io_error, path.string() + ": colour PPM must be 8-bit");
  }
  ColorImage img(h.width, h.height);
  in.read(reinterpret_cast<char *>(img.data.data()), static_cast<std::streamsize>(img.data.size() * 3));
  if (!in) {
    throw Error(Errc::io_error, path.string() + ": truncated raster");
  }
  return img;
}

inline void write_ppm(const std::filesystem::path & path, const ImageView<Rgb> & img)
{
  auto out = detail::open_out(path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(
    reinterpret_cast<const char *>(img.data.data()), static_cast<std::streamsize>(img.data.size() * 3));
  if (!out) {
    throw Error(Errc::io_error, "short write to " + path.string());
  }
}

/// Depth in meters from a millimeter PGM.
inline DepthImage read_depth(const std::filesystem::path & path)
{
  const auto mm = read_pgm16(path);
  return depth_from_mm(mm.view());
}

}  // namespace adunit::netpbm

#endif  // ADUNIT__NETPBM_HPP_
