#ifndef ADUNIT__CLOCK_HPP_
#define ADUNIT__CLOCK_HPP_

#include <chrono>
#include <cstdint>
#include <ctime>

namespace adunit
{

// Host-wide monotonic clock; timestamps are comparable across processes.
inline std::uint64_t now_ns() noexcept
{
  timespec ts {};
  ::clock_gettime(CLOCK_MONOTONIC, &ts);
  return static_cast<std::uint64_t>(ts.tv_sec) * 1'000'000'000ull +
         static_cast<std::uint64_t>(ts.tv_nsec);
}

inline timespec monotonic_deadline(std::chrono::nanoseconds timeout) noexcept
{
  const std::uint64_t t = now_ns() + static_cast<std::uint64_t>(timeout.count());
  timespec ts {};
  ts.tv_sec = static_cast<time_t>(t / 1'000'000'000ull);
  ts.tv_nsec = static_cast<long>(t % 1'000'000'000ull);
  return ts;
}

}  // namespace adunit

#endif  // ADUNIT__CLOCK_HPP_
