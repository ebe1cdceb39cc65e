#ifndef ADUNIT__HARNESS__REPORT_HPP_
#define ADUNIT__HARNESS__REPORT_HPP_

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adunit/harness/latency.hpp"
#include "adunit/harness/pipeline.hpp"

namespace adunit::harness
{

struct Stats
{
  double min {0.0};
  double mean {0.0};
  double max {0.0};
};

template<typename Range>
Stats stats_of(const Range & values)
{
  Stats s;
  std::size_t n = 0;
  double sum = 0.0;
  s.min = std::numeric_limits<double>::infinity();
  s.max = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
    sum += v;
    ++n;
  }
  if (n == 0) {
    return {};
  }
  s.mean = sum / static_cast<double>(n);
  return s;
}

struct StageSummary
{
  std::string stage;
  TransportKind transport {TransportKind::loaned};
  std::size_t frames {0};
  double fps {0.0};
  Stats turnaround_ms;
  Stats latency_ms;
  // Stage CPU time over stage wall time, in percent of one core.
  double cpu_percent {0.0};
};

/// Delivered frames per second: intervals between the first and last take.
inline double delivered_fps(std::span<const BenchRecord> records)
{
  if (records.size() < 2) {
    return 0.0;
  }
  auto [lo, hi] = std::minmax_element(
    records.begin(), records.end(),
    [](const auto & a, const auto & b) {return a.t_take_ns < b.t_take_ns;});
  const double span_s = static_cast<double>(hi->t_take_ns - lo->t_take_ns) / 1e9;
  return span_s > 0.0 ? static_cast<double>(records.size() - 1) / span_s : 0.0;
}

/// One summary per (stage, transport) present in `records`.
inline std::vector<StageSummary> summarize(std::span<const BenchRecord> records)
{
  std::map<std::pair<std::string, TransportKind>, std::vector<BenchRecord>> groups;
  for (const auto & r : records) {
    groups[{r.stage, r.transport}].push_back(r);
  }
  std::vector<StageSummary> out;
  for (const auto & [key, recs] : groups) {
    StageSummary s;
    s.stage = key.first;
    s.transport = key.second;
    s.frames = recs.size();
    s.fps = delivered_fps(recs);
    std::vector<double> turn;
    std::vector<double> lat;
    for (const auto & r : recs) {
      turn.push_back(r.turnaround_ms());
      lat.push_back(r.latency_ms());
    }
    s.turnaround_ms = stats_of(turn);
    s.latency_ms = stats_of(lat);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<StageSummary> summarize(const PipelineResult & run)
{
  const auto records = run.records();
  auto out = summarize(std::span<const BenchRecord>(records));
  for (auto & s : out) {
    if (const auto * st = run.stage(s.stage); st && st->wall_seconds > 0.0) {
      s.cpu_percent = 100.0 * st->cpu_seconds / st->wall_seconds;
    }
  }
  return out;
}

inline constexpr const char * kCsvHeader =
  "stage,transport,seq,t_publish_ns,t_take_ns,t_done_ns,turnaround_ms,latency_ms";

inline void write_csv(std::ostream & os, std::span<const BenchRecord> records)
{
  os << kCsvHeader << '\n';
  char buf[256];
  for (const auto & r : records) {
    std::snprintf(
      buf, sizeof(buf), "%s,%s,%llu,%llu,%llu,%llu,%.6f,%.6f\n", r.stage.c_str(),
      std::string(to_string(r.transport)).c_str(), static_cast<unsigned long long>(r.seq),
      static_cast<unsigned long long>(r.t_publish_ns),
      static_cast<unsigned long long>(r.t_take_ns), static_cast<unsigned long long>(r.t_done_ns),
      r.turnaround_ms(), r.latency_ms());
    os << buf;
  }
}

/// Per-stage rows, one column group per transport.
inline void write_table(std::ostream & os, std::span<const StageSummary> rows)
{
  char buf[512];
  std::snprintf(
    buf, sizeof(buf), "%-12s %-8s %7s %8s %10s %10s %10s %10s %10s %7s\n", "stage", "transport",
    "frames", "FPS", "turn_min", "turn_mean", "turn_max", "lat_mean", "lat_max", "CPU%");
  os << buf;
  for (const auto & s : rows) {
    std::snprintf(
      buf, sizeof(buf), "%-12s %-8s %7zu %8.2f %10.3f %10.3f %10.3f %10.3f %10.3f %7.1f\n",
      s.stage.c_str(), std::string(to_string(s.transport)).c_str(), s.frames, s.fps,
      s.turnaround_ms.min, s.turnaround_ms.mean, s.turnaround_ms.max, s.latency_ms.mean,
      s.latency_ms.max, s.cpu_percent);
    os << buf;
  }
}

struct StageComparison
{
  std::string stage;
  StageSummary loaned;
  StageSummary copy;
};

inline std::vector<StageComparison> compare(
  std::span<const StageSummary> loaned, std::span<const StageSummary> copy)
{
  std::vector<StageComparison> out;
  for (const auto & l : loaned) {
    for (const auto & c : copy) {
      if (c.stage == l.stage) {
        out.push_back({l.stage, l, c});
      }
    }
  }
  return out;
}

inline double ratio(double num, double den)
{
  return den > 0.0 ? num / den : 0.0;
}

// Reference improvements measured on the embedded target, printed next to
// the local ratios. Not expected to match off-target.
inline constexpr double kReferenceTurnaroundRatio = 7.5;
inline constexpr double kReferenceCpuRatio = 2.0;

/// Side-by-side loaned/copy report, plus the raw transport latency run.
inline void write_comparison(
  std::ostream & os, std::span<const StageComparison> rows,
  const std::optional<std::pair<LatencyResult, LatencyResult>> & latency)
{
  char buf[512];
  std::snprintf(
    buf, sizeof(buf), "%-12s | %17s | %25s | %21s | %15s\n", "stage", "FPS loaned/copy",
    "turnaround ms loaned/copy", "latency ms loaned/copy", "CPU% loaned/copy");
  os << buf;
  for (const auto & r : rows) {
    std::snprintf(
      buf, sizeof(buf), "%-12s | %8.2f %8.2f | %12.3f %12.3f | %10.3f %10.3f | %7.1f %7.1f\n",
      r.stage.c_str(), r.loaned.fps, r.copy.fps, r.loaned.turnaround_ms.mean,
      r.copy.turnaround_ms.mean, r.loaned.latency_ms.mean, r.copy.latency_ms.mean,
      r.loaned.cpu_percent, r.copy.cpu_percent);
    os << buf;
  }
  os << '\n';
  for (const auto & r : rows) {
    std::snprintf(
      buf, sizeof(buf),
      "%-12s copy/loaned: turnaround %.2fx (target board %.1fx), CPU %.2fx (target board %.1fx), "
      "latency %.2fx\n",
      r.stage.c_str(), ratio(r.copy.turnaround_ms.mean, r.loaned.turnaround_ms.mean),
      kReferenceTurnaroundRatio, ratio(r.copy.cpu_percent, r.loaned.cpu_percent),
      kReferenceCpuRatio, ratio(r.copy.latency_ms.mean, r.loaned.latency_ms.mean));
    os << buf;
  }
  if (latency) {
    const auto & [l, c] = *latency;
    os << '\n';
    std::snprintf(
      buf, sizeof(buf),
      "transport latency, %zu x %zu-byte frames: loaned mean %.3f ms (min %.3f, max %.3f), "
      "copy mean %.3f ms (min %.3f, max %.3f), loaned/copy %.3f\n",
      l.latency_ms.size(), l.message_size, l.mean_ms(), l.min_ms(), l.max_ms(),
      c.mean_ms(), c.min_ms(), c.max_ms(), ratio(l.mean_ms(), c.mean_ms()));
    os << buf;
  }
}

}  // namespace adunit::harness

#endif  // ADUNIT__HARNESS__REPORT_HPP_
