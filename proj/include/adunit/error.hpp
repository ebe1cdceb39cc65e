#ifndef ADUNIT__ERROR_HPP_
#define ADUNIT__ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace adunit
{

enum class Errc
{
  // transport
  name_collision,
  segment_allocation_failure,
  segment_not_found,
  segment_corrupt,
  invalid_config,
  loans_exhausted,
  pool_exhausted,
  stale_handle,
  too_many_subscribers,
  publisher_exists,
  disconnected,
  message_too_large,
  // perception
  dimension_mismatch,
  missing_calibration,
  frame_mismatch,
  singular_homography,
  no_lane_pixels,
  singular_system,
  insufficient_pixels,
  // io / harness
  io_error,
  invalid_spec,
  spawn_failure,
  transport_failure,
};

constexpr std::string_view to_string(Errc code) noexcept
{
  switch (code) {
    case Errc::name_collision: return "NameCollision";
    case Errc::segment_allocation_failure: return "SegmentAllocationFailure";
    case Errc::segment_not_found: return "SegmentNotFound";
    case Errc::segment_corrupt: return "SegmentCorrupt";
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::loans_exhausted: return "LoansExhausted";
    case Errc::pool_exhausted: return "PoolExhausted";
    case Errc::stale_handle: return "StaleHandle";
    case Errc::too_many_subscribers: return "TooManySubscribers";
    case Errc::publisher_exists: return "PublisherExists";
    case Errc::disconnected: return "Disconnected";
    case Errc::message_too_large: return "MessageTooLarge";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::missing_calibration: return "MissingCalibration";
    case Errc::frame_mismatch: return "FrameMismatch";
    case Errc::singular_homography: return "SingularHomography";
    case Errc::no_lane_pixels: return "NoLanePixels";
    case Errc::singular_system: return "SingularSystem";
    case Errc::insufficient_pixels: return "InsufficientPixels";
    case Errc::io_error: return "IoError";
    case Errc::invalid_spec: return "InvalidSpec";
    case Errc::spawn_failure: return "SpawnFailure";
    case Errc::transport_failure: return "TransportFailure";
  }
  return "Unknown";
}

/// Exception carrying a machine-checkable error code.
class Error : public std::runtime_error
{
public:
  Error(Errc code, const std::string & what)
  : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept {return code_;}

private:
  Errc code_;
};

}  // namespace adunit

#endif  // ADUNIT__ERROR_HPP_
