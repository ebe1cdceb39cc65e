#ifndef ADUNIT__HARNESS__LATENCY_HPP_
#define ADUNIT__HARNESS__LATENCY_HPP_

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "adunit/clock.hpp"
#include "adunit/error.hpp"
#include "adunit/harness/pipeline.hpp"
#include "adunit/harness/ports.hpp"
#include "adunit/transport/copy.hpp"
#include "adunit/transport/loaned.hpp"

// Point-to-point transport latency: one publisher in this process, one
// subscriber in a child process, fixed-size frames sent at a fixed pace.

namespace adunit::harness
{

struct LatencyConfig
{
  std::size_t message_size {640 * 480 * 4};
  std::size_t messages {1000};
  std::chrono::microseconds interval {2000};
  std::chrono::milliseconds timeout {5000};
};

struct LatencyResult
{
  TransportKind transport {TransportKind::loaned};
  std::size_t message_size {0};
  std::vector<double> latency_ms;
  std::size_t sent {0};

  double mean_ms() const
  {
    return latency_ms.empty() ? 0.0 :
           std::accumulate(latency_ms.begin(), latency_ms.end(), 0.0) /
           static_cast<double>(latency_ms.size());
  }
  double min_ms() const
  {
    return latency_ms.empty() ? 0.0 : *std::min_element(latency_ms.begin(), latency_ms.end());
  }
  double max_ms() const
  {
    return latency_ms.empty() ? 0.0 : *std::max_element(latency_ms.begin(), latency_ms.end());
  }
};

namespace detail
{

// Frame prefix: seq, t_publish. seq == kLatencyStop ends the run.
inline constexpr std::uint64_t kLatencyStop = std::numeric_limits<std::uint64_t>::max();

inline void stamp(std::span<std::byte> buf, std::uint64_t seq)
{
  const std::uint64_t t = now_ns();
  std::memcpy(buf.data(), &seq, 8);
  std::memcpy(buf.data() + 8, &t, 8);
}

inline std::vector<double> latency_child(
  TransportKind t, const std::string & topic, std::uint16_t port, const LatencyConfig & cfg,
  int ready_fd)
{
  std::vector<double> lat;
  lat.reserve(cfg.messages);
  std::unique_ptr<InPort> in;
  if (t == TransportKind::loaned) {
    in = std::make_unique<LoanedInPort>(transport::Topic::open(topic));
  } else {
    in = std::make_unique<CopyInPort>(port, cfg.message_size);
  }
  signal_ready(ready_fd);
  for (;;) {
    const auto msg = in->take(cfg.timeout);
    const std::uint64_t t_take = now_ns();
    if (!msg) {
      throw Error(Errc::transport_failure, "latency subscriber timed out");
    }
    std::uint64_t seq = 0;
    std::uint64_t t_pub = 0;
    std::memcpy(&seq, msg->data(), 8);
    std::memcpy(&t_pub, msg->data() + 8, 8);
    in->release();
    if (seq == kLatencyStop) {
      break;
    }
    lat.push_back(static_cast<double>(t_take - t_pub) / 1e6);
  }
  return lat;
}

}  // namespace detail

inline LatencyResult measure_latency(TransportKind t, const LatencyConfig & cfg = {})
{
  if (cfg.message_size < 16 || cfg.messages == 0) {
    throw Error(Errc::invalid_config, "latency run needs >= 16-byte messages and >= 1 message");
  }
  const std::string topic = detail::make_run_names().camera + ".latency";
  std::optional<transport::Topic> shm;
  std::unique_ptr<transport::CopyPublisher> tcp;
  if (t == TransportKind::loaned) {
    shm.emplace(transport::Topic::create({topic, cfg.message_size}));
  } else {
    tcp = std::make_unique<transport::CopyPublisher>(0, cfg.message_size);
  }
  const std::uint16_t port = tcp ? tcp->port() : 0;
  const auto scratch = std::filesystem::temp_directory_path() / ("adunit-" + topic);
  std::filesystem::create_directories(scratch);

  LatencyResult result;
  result.transport = t;
  result.message_size = cfg.message_size;
  detail::Pipe ready;
  detail::StageGroup group(true, scratch);
  group.launch(
    "latency", [&] {
      StageResult r;
      r.stage = "latency";
      r.transport = t;
      const auto lat = detail::latency_child(t, topic, port, cfg, ready.write_end());
      // Carry the samples in the records' timestamps (ns resolution).
      for (std::size_t i = 0; i < lat.size(); ++i) {
        r.records.push_back(
          {"latency", t, i + 1, 0, static_cast<std::uint64_t>(std::llround(lat[i] * 1e6)),
            static_cast<std::uint64_t>(std::llround(lat[i] * 1e6))});
      }
      return r;
    });
  if (!ready.wait_for(1, cfg.timeout)) {
    throw Error(Errc::spawn_failure, "latency subscriber did not start");
  }
  std::unique_ptr<OutPort> out;
  if (t == TransportKind::loaned) {
    out = std::make_unique<LoanedOutPort>(*shm);
  } else {
    if (!tcp->wait_for_subscribers(1, cfg.timeout)) {
      throw Error(Errc::spawn_failure, "latency subscriber did not connect");
    }
    out = std::make_unique<CopyOutPort>(*tcp, cfg.message_size);
  }
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < cfg.messages; ++i) {
    std::this_thread::sleep_until(t0 + cfg.interval * static_cast<std::int64_t>(i));
    auto buf = out->acquire();
    std::fill(buf.begin() + 16, buf.end(), static_cast<std::byte>(i & 0xFF));
    detail::stamp(buf, i + 1);
    out->send(cfg.message_size);
    ++result.sent;
  }
  auto buf = out->acquire();
  detail::stamp(buf, detail::kLatencyStop);
  out->send(cfg.message_size);

  const auto stages = group.collect();
  for (const auto & r : stages.front().records) {
    result.latency_ms.push_back(r.latency_ms());
  }
  return result;
}

}  // namespace adunit::harness

#endif  // ADUNIT__HARNESS__LATENCY_HPP_
