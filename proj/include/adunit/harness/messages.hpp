#ifndef ADUNIT__HARNESS__MESSAGES_HPP_
#define ADUNIT__HARNESS__MESSAGES_HPP_

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>

#include "adunit/error.hpp"
#include "adunit/image.hpp"
#include "adunit/lane/lane.hpp"
#include "adunit/obstacle.hpp"
#include "adunit/pointcloud.hpp"

// Envelope shared by every pipeline topic, identical on both transports.

namespace adunit::harness
{

enum class MessageKind : std::uint32_t
{
  camera = 1,
  cloud = 2,
  grid = 3,
  trajectory = 4,
};

inline constexpr std::uint32_t kEndOfStream = 1;

struct MessageHeader
{
  std::uint64_t seq;
  std::uint64_t t_publish_ns;
  MessageKind kind;
  std::uint32_t flags;
  std::uint64_t body_size;
  std::uint32_t width;
  std::uint32_t height;
  std::uint8_t reserved[24];
};
static_assert(sizeof(MessageHeader) == 64);

inline constexpr std::size_t kHeaderSize = sizeof(MessageHeader);

inline MessageHeader read_header(std::span<const std::byte> msg)
{
  if (msg.size() < kHeaderSize) {
    throw Error(Errc::transport_failure, "message shorter than its header");
  }
  MessageHeader h {};
  std::memcpy(&h, msg.data(), kHeaderSize);
  if (msg.size() < kHeaderSize + h.body_size) {
    throw Error(Errc::transport_failure, "message body truncated");
  }
  return h;
}

inline void write_header(std::span<std::byte> msg, const MessageHeader & h)
{
  std::memcpy(msg.data(), &h, kHeaderSize);
}

inline std::span<const std::byte> body(std::span<const std::byte> msg, const MessageHeader & h)
{
  return msg.subspan(kHeaderSize, static_cast<std::size_t>(h.body_size));
}

// camera: u16 depth (mm) raster, then RGB raster
constexpr std::size_t camera_body_size(std::size_t w, std::size_t h) noexcept
{
  return w * h * (sizeof(std::uint16_t) + sizeof(Rgb));
}

constexpr std::size_t camera_message_size(std::size_t w, std::size_t h) noexcept
{
  return kHeaderSize + camera_body_size(w, h);
}

constexpr std::size_t cloud_message_size(std::size_t w, std::size_t h) noexcept
{
  return kHeaderSize + cloud_wire_size(w * h);
}

constexpr std::size_t grid_message_size(std::size_t rows, std::size_t cols) noexcept
{
  return kHeaderSize + kGridHeaderSize + rows * cols;
}

inline constexpr std::size_t kTrajectoryMessageSize = kHeaderSize + lane::kTrajectoryWireSize;

struct CameraView
{
  ImageView<std::uint16_t> depth_mm;
  ImageView<Rgb> color;
};

inline CameraView view_camera(std::span<const std::byte> msg, const MessageHeader & h)
{
  const std::size_t n = std::size_t {h.width} * h.height;
  if (h.kind != MessageKind::camera || h.body_size < camera_body_size(h.width, h.height)) {
    throw Error(Errc::transport_failure, "not a camera message");
  }
  const auto * depth = reinterpret_cast<const std::uint16_t *>(msg.data() + kHeaderSize);
  const auto * color = reinterpret_cast<const Rgb *>(msg.data() + kHeaderSize + n * 2);
  return {{h.width, h.height, {depth, n}}, {h.width, h.height, {color, n}}};
}

struct CameraBuffers
{
  std::span<std::uint16_t> depth_mm;
  std::span<Rgb> color;
};

inline CameraBuffers camera_buffers(std::span<std::byte> msg, std::size_t w, std::size_t h)
{
  const std::size_t n = w * h;
  if (msg.size() < camera_message_size(w, h)) {
    throw Error(Errc::message_too_large, "camera buffer too small");
  }
  return {{reinterpret_cast<std::uint16_t *>(msg.data() + kHeaderSize), n},
    {reinterpret_cast<Rgb *>(msg.data() + kHeaderSize + n * 2), n}};
}

}  // namespace adunit::harness

#endif  // ADUNIT__HARNESS__MESSAGES_HPP_
