#ifndef ADUNIT__HARNESS__PIPELINE_HPP_
#define ADUNIT__HARNESS__PIPELINE_HPP_

#include <poll.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "adunit/clock.hpp"
#include "adunit/config.hpp"
#include "adunit/error.hpp"
#include "adunit/harness/messages.hpp"
#include "adunit/harness/ports.hpp"
#include "adunit/harness/scene.hpp"
#include "adunit/lane/lane.hpp"
#include "adunit/obstacle.hpp"
#include "adunit/pointcloud.hpp"
#include "adunit/transport/copy.hpp"
#include "adunit/transport/loaned.hpp"

namespace adunit::harness
{

inline constexpr std::string_view kPointcloudStage = "pointcloud";
inline constexpr std::string_view kObstacleStage = "obstacle";
inline constexpr std::string_view kLaneStage = "lane";

struct BenchRecord
{
  std::string stage;
  TransportKind transport {TransportKind::loaned};
  std::uint64_t seq {0};
  std::uint64_t t_publish_ns {0};
  std::uint64_t t_take_ns {0};
  std::uint64_t t_done_ns {0};

  /// Raw computation time of the stage for this message.
  double turnaround_ms() const noexcept
  {
    return static_cast<double>(t_done_ns - t_take_ns) / 1e6;
  }
  double latency_ms() const noexcept
  {
    return static_cast<double>(t_take_ns - t_publish_ns) / 1e6;
  }
};

struct StageResult
{
  std::string stage;
  TransportKind transport {TransportKind::loaned};
  std::vector<BenchRecord> records;
  // seq -> hex of what the stage published (cloud: FNV-1a digest).
  std::map<std::uint64_t, std::string> outputs;
  double cpu_seconds {0.0};
  double wall_seconds {0.0};
  double max_residual {0.0};
  std::uint64_t stop_commands {0};
  std::uint64_t dropped {0};
};

struct PipelineConfig
{
  TransportKind transport {TransportKind::loaned};
  bool pointcloud {true};
  bool obstacle {true};
  bool lane {true};
  bool processes {true};
  unsigned kernel_threads {1};
  std::chrono::milliseconds stage_timeout {10000};

  void validate() const
  {
    if (!pointcloud && !obstacle && !lane) {
      throw Error(Errc::invalid_config, "no stage enabled");
    }
    if (obstacle && !pointcloud) {
      throw Error(Errc::invalid_config, "obstacle stage needs the pointcloud stage upstream");
    }
  }
};

struct PipelineResult
{
  TransportKind transport {TransportKind::loaned};
  std::vector<StageResult> stages;
  double wall_seconds {0.0};
  std::uint64_t frames_published {0};
  // Every loaned pool back at capacity after the run (always true for copy).
  bool pool_full {true};

  const StageResult * stage(std::string_view name) const
  {
    for (const auto & s : stages) {
      if (s.stage == name) {
        return &s;
      }
    }
    return nullptr;
  }

  std::vector<BenchRecord> records() const
  {
    std::vector<BenchRecord> all;
    for (const auto & s : stages) {
      all.insert(all.end(), s.records.begin(), s.records.end());
    }
    return all;
  }
};

namespace detail
{

inline std::string to_hex(std::span<const std::byte> bytes)
{
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    const auto v = std::to_integer<unsigned>(b);
    s.push_back(digits[v >> 4]);
    s.push_back(digits[v & 0xF]);
  }
  return s;
}

inline std::string fnv1a_hex(std::span<const std::byte> bytes)
{
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= std::to_integer<std::uint64_t>(b);
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline double cpu_seconds(bool per_thread)
{
  rusage ru {};
  ::getrusage(per_thread ? RUSAGE_THREAD : RUSAGE_SELF, &ru);
  return static_cast<double>(ru.ru_utime.tv_sec + ru.ru_stime.tv_sec) +
         static_cast<double>(ru.ru_utime.tv_usec + ru.ru_stime.tv_usec) / 1e6;
}

inline nlohmann::json stage_to_json(const StageResult & s)
{
  nlohmann::json recs = nlohmann::json::array();
  for (const auto & r : s.records) {
    recs.push_back({r.seq, r.t_publish_ns, r.t_take_ns, r.t_done_ns});
  }
  nlohmann::json outs = nlohmann::json::object();
  for (const auto & [seq, v] : s.outputs) {
    outs[std::to_string(seq)] = v;
  }
  return {{"stage", s.stage}, {"transport", to_string(s.transport)}, {"records", recs},
    {"outputs", outs}, {"cpu_seconds", s.cpu_seconds}, {"wall_seconds", s.wall_seconds},
    {"max_residual", s.max_residual}, {"stop_commands", s.stop_commands},
    {"dropped", s.dropped}};
}

inline StageResult stage_from_json(const nlohmann::json & j)
{
  StageResult s;
  s.stage = j.at("stage").get<std::string>();
  s.transport = parse_transport(j.at("transport").get<std::string>());
  for (const auto & r : j.at("records")) {
    s.records.push_back(
      {s.stage, s.transport, r[0].get<std::uint64_t>(), r[1].get<std::uint64_t>(),
        r[2].get<std::uint64_t>(), r[3].get<std::uint64_t>()});
  }
  for (const auto & [k, v] : j.at("outputs").items()) {
    s.outputs[std::stoull(k)] = v.get<std::string>();
  }
  s.cpu_seconds = j.at("cpu_seconds").get<double>();
  s.wall_seconds = j.at("wall_seconds").get<double>();
  s.max_residual = j.at("max_residual").get<double>();
  s.stop_commands = j.at("stop_commands").get<std::uint64_t>();
  s.dropped = j.at("dropped").get<std::uint64_t>();
  return s;
}

// Per-message work of a stage: writes the output body into `out`, returns
// its length and sets `identity` to a digest of what was published.
using StageWork = std::function<std::size_t(
      const MessageHeader &, std::span<const std::byte> msg, std::span<std::byte> out,
      std::string & identity, StageResult & result)>;

inline StageResult stage_loop(
  std::string_view name, TransportKind transport, InPort & in, OutPort & out,
  MessageKind out_kind, std::chrono::nanoseconds timeout, bool per_thread_cpu,
  const StageWork & work)
{
  StageResult res;
  res.stage = std::string(name);
  res.transport = transport;
  const double cpu0 = cpu_seconds(per_thread_cpu);
  const std::uint64_t start = now_ns();
  for (;;) {
    const auto msg = in.take(timeout);
    if (!msg) {
      throw Error(Errc::transport_failure, std::string(name) + ": no input before timeout");
    }
    const std::uint64_t t_take = now_ns();
    const MessageHeader h = read_header(*msg);
    auto buf = out.acquire();
    MessageHeader oh {};
    oh.seq = h.seq;
    oh.kind = out_kind;
    oh.width = h.width;
    oh.height = h.height;
    if ((h.flags & kEndOfStream) != 0) {
      in.release();
      oh.flags = kEndOfStream;
      oh.t_publish_ns = now_ns();
      write_header(buf, oh);
      out.send(kHeaderSize);
      break;
    }
    std::string identity;
    oh.body_size = work(h, *msg, buf.subspan(kHeaderSize), identity, res);
    oh.t_publish_ns = now_ns();
    write_header(buf, oh);
    out.send(kHeaderSize + oh.body_size);
    const std::uint64_t t_done = now_ns();
    in.release();
    res.records.push_back({res.stage, transport, h.seq, h.t_publish_ns, t_take, t_done});
    res.outputs[h.seq] = std::move(identity);
  }
  res.wall_seconds = static_cast<double>(now_ns() - start) / 1e9;
  res.cpu_seconds = cpu_seconds(per_thread_cpu) - cpu0;
  return res;
}

inline StageWork pointcloud_work(const ProjectionMatrix & p, unsigned threads)
{
  return [p, threads](
    const MessageHeader & h, std::span<const std::byte> msg, std::span<std::byte> out,
    std::string & identity, StageResult &) -> std::size_t {
           const CameraView cam = view_camera(msg, h);
           std::size_t n = 0;
           if (threads <= 1) {
             auto * pts = reinterpret_cast<Point3 *>(out.data() + kCloudHeaderSize);
             n = generate_pointcloud_into(
               p, cam.depth_mm, cam.color,
               std::span<Point3>(pts, (out.size() - kCloudHeaderSize) / sizeof(Point3)));
             write_cloud_header(out, static_cast<std::uint32_t>(n), CloudFrame::camera);
           } else {
             const auto cloud = generate_pointcloud(p, cam.depth_mm, cam.color, threads);
             n = cloud.size();
             encode_cloud(cloud, out);
           }
           const std::size_t len = cloud_wire_size(n);
           identity = fnv1a_hex(out.first(len));
           return len;
         };
}

inline StageWork obstacle_work(const ObstacleConfig & cfg)
{
  return [cfg](
    const MessageHeader & h, std::span<const std::byte> msg, std::span<std::byte> out,
    std::string & identity, StageResult & res) -> std::size_t {
           const CloudView cloud = view_cloud(body(msg, h));
           const ObstacleGrid grid =
             detect_obstacles(cloud.points, cfg.transform, cfg.box, cfg.rows, cfg.cols);
           if (obstacle_in_path(grid, cfg.footprint, cfg.min_count)) {
             ++res.stop_commands;
           }
           const std::size_t len = encode_grid(grid, out);
           identity = to_hex(out.first(len));
           return len;
         };
}

inline StageWork lane_work(const lane::LaneConfig & cfg)
{
  return [cfg](
    const MessageHeader & h, std::span<const std::byte> msg, std::span<std::byte> out,
    std::string & identity, StageResult & res) -> std::size_t {
           const CameraView cam = view_camera(msg, h);
           const lane::LaneResult r = lane::detect_lane(cam.color, cfg);
           if (r.valid) {
             res.max_residual =
               std::max({res.max_residual, r.lane_residual, r.trajectory_residual});
           }
           const std::size_t len = lane::encode_trajectory(r, out);
           identity = to_hex(out.first(len));
           return len;
         };
}

struct RunNames
{
  std::string camera;
  std::string cloud;
  std::string grid;
  std::string trajectory;
};

inline RunNames make_run_names()
{
  static std::atomic<unsigned> counter {0};
  const std::string base = "run" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
  return {base + ".camera", base + ".cloud", base + ".grid", base + ".trajectory"};
}

// Transport resources created by the orchestrator before stages start.
struct Resources
{
  RunNames names;
  std::size_t camera_size {0};
  std::size_t cloud_size {0};
  std::size_t grid_size {0};
  std::vector<transport::Topic> topics;
  std::unique_ptr<transport::CopyPublisher> camera_pub;
  std::unique_ptr<transport::CopyPublisher> cloud_pub;
  std::unique_ptr<transport::CopyPublisher> grid_pub;
  std::unique_ptr<transport::CopyPublisher> trajectory_pub;
};

inline std::unique_ptr<InPort> make_in(
  TransportKind t, const std::string & topic, transport::CopyPublisher * pub, std::size_t size)
{
  if (t == TransportKind::loaned) {
    return std::make_unique<LoanedInPort>(transport::Topic::open(topic));
  }
  return std::make_unique<CopyInPort>(pub->port(), size);
}

inline std::unique_ptr<OutPort> make_out(
  TransportKind t, const std::string & topic, transport::CopyPublisher * pub, std::size_t size,
  std::size_t expected_subscribers, std::chrono::milliseconds timeout)
{
  if (t == TransportKind::loaned) {
    return std::make_unique<LoanedOutPort>(transport::Topic::open(topic));
  }
  if (!pub->wait_for_subscribers(expected_subscribers, timeout)) {
    throw Error(Errc::transport_failure, topic + ": downstream never connected");
  }
  return std::make_unique<CopyOutPort>(*pub, size);
}

inline void signal_ready(int fd)
{
  const char c = 1;
  while (::write(fd, &c, 1) < 0 && errno == EINTR) {
  }
}

// Sets up a stage's ports, reports readiness on `ready_fd`, then runs it.
inline StageResult stage_main(
  std::string_view stage, const PipelineConfig & pc, const Config & cfg, Resources & res,
  int ready_fd)
{
  const auto t = pc.transport;
  const bool per_thread = !pc.processes;
  std::unique_ptr<InPort> in;
  std::unique_ptr<OutPort> out;
  StageWork work;
  MessageKind kind {};
  if (stage == kPointcloudStage) {
    in = make_in(t, res.names.camera, res.camera_pub.get(), res.camera_size);
    out = make_out(
      t, res.names.cloud, res.cloud_pub.get(), res.cloud_size, pc.obstacle ? 1 : 0,
      pc.stage_timeout);
    work = pointcloud_work(cfg.calibration, pc.kernel_threads);
    kind = MessageKind::cloud;
  } else if (stage == kObstacleStage) {
    in = make_in(t, res.names.cloud, res.cloud_pub.get(), res.cloud_size);
    out = make_out(t, res.names.grid, res.grid_pub.get(), res.grid_size, 0, pc.stage_timeout);
    work = obstacle_work(cfg.obstacle);
    kind = MessageKind::grid;
  } else {
    in = make_in(t, res.names.camera, res.camera_pub.get(), res.camera_size);
    out = make_out(
      t, res.names.trajectory, res.trajectory_pub.get(), kTrajectoryMessageSize, 0,
      pc.stage_timeout);
    work = lane_work(cfg.lane);
    kind = MessageKind::trajectory;
  }
  signal_ready(ready_fd);
  StageResult r = stage_loop(stage, t, *in, *out, kind, pc.stage_timeout, per_thread, work);
  if (auto * loaned = dynamic_cast<LoanedInPort *>(in.get())) {
    r.dropped = loaned->subscriber().dropped();
  }
  return r;
}

class Pipe
{
public:
  Pipe()
  {
    if (::pipe(fds_) != 0) {
      throw Error(Errc::spawn_failure, "pipe() failed");
    }
  }
  ~Pipe()
  {
    ::close(fds_[0]);
    ::close(fds_[1]);
  }
  Pipe(const Pipe &) = delete;
  Pipe & operator=(const Pipe &) = delete;
  int read_end() const noexcept {return fds_[0];}
  int write_end() const noexcept {return fds_[1];}

  bool wait_for(std::size_t n, std::chrono::milliseconds timeout) const
  {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    std::size_t got = 0;
    while (got < n) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now()).count();
      if (left <= 0) {
        return false;
      }
      pollfd p {fds_[0], POLLIN, 0};
      if (::poll(&p, 1, static_cast<int>(left)) <= 0) {
        continue;
      }
      char buf[16];
      const auto k = ::read(fds_[0], buf, std::min<std::size_t>(sizeof(buf), n - got));
      if (k > 0) {
        got += static_cast<std::size_t>(k);
      }
    }
    return true;
  }

private:
  int fds_[2] {-1, -1};
};

// Runs stages as child processes or threads and collects their results.
class StageGroup
{
public:
  StageGroup(bool processes, std::filesystem::path scratch)
  : processes_(processes), scratch_(std::move(scratch)) {}

  StageGroup(const StageGroup &) = delete;
  StageGroup & operator=(const StageGroup &) = delete;

  ~StageGroup()
  {
    for (auto & c : children_) {
      if (!c.reaped) {
        ::kill(c.pid, SIGKILL);
        ::waitpid(c.pid, nullptr, 0);
      }
    }
    for (auto & t : threads_) {
      if (t.thread.joinable()) {
        t.thread.join();
      }
    }
    std::error_code ec;
    std::filesystem::remove_all(scratch_, ec);
  }

  void launch(const std::string & name, std::function<StageResult()> body)
  {
    if (!processes_) {
      auto & slot = threads_.emplace_back();
      slot.name = name;
      slot.thread = std::thread(
        [&slot, body = std::move(body)] {
          try {
            slot.result = body();
          } catch (...) {
            slot.error = std::current_exception();
          }
        });
      return;
    }
    const auto path = scratch_ / (name + ".json");
    std::fflush(nullptr);
    const pid_t pid = ::fork();
    if (pid < 0) {
      throw Error(Errc::spawn_failure, "fork failed for stage " + name);
    }
    if (pid == 0) {
      int code = 0;
      nlohmann::json j;
      try {
        j = stage_to_json(body());
      } catch (const std::exception & e) {
        j = {{"error", e.what()}};
        code = 2;
      }
      {
        std::ofstream out(path);
        out << j.dump();
      }
      ::_exit(code);
    }
    children_.push_back({name, pid, path, false});
  }

  std::vector<StageResult> collect()
  {
    std::vector<StageResult> results;
    std::string failures;
    for (auto & t : threads_) {
      t.thread.join();
      if (t.error) {
        try {
          std::rethrow_exception(t.error);
        } catch (const std::exception & e) {
          failures += t.name + ": " + e.what() + "; ";
        }
      } else {
        results.push_back(std::move(t.result));
      }
    }
    for (auto & c : children_) {
      int status = 0;
      ::waitpid(c.pid, &status, 0);
      c.reaped = true;
      nlohmann::json j;
      try {
        std::ifstream in(c.result_path);
        in >> j;
      } catch (...) {
        failures += c.name + ": exited without a result (status " + std::to_string(status) + "); ";
        continue;
      }
      if (j.contains("error")) {
        failures += c.name + ": " + j.at("error").get<std::string>() + "; ";
      } else {
        results.push_back(stage_from_json(j));
      }
    }
    if (!failures.empty()) {
      throw Error(Errc::transport_failure, failures);
    }
    return results;
  }

private:
  struct Child
  {
    std::string name;
    pid_t pid;
    std::filesystem::path result_path;
    bool reaped;
  };
  struct ThreadSlot
  {
    std::string name;
    std::thread thread;
    StageResult result;
    std::exception_ptr error;
  };

  bool processes_;
  std::filesystem::path scratch_;
  std::vector<Child> children_;
  // Running threads hold references into their slots; deque keeps them stable.
  std::deque<ThreadSlot> threads_;
};

inline std::vector<std::string> enabled_stages(const PipelineConfig & pc)
{
  std::vector<std::string> s;
  if (pc.pointcloud) {
    s.emplace_back(kPointcloudStage);
  }
  if (pc.obstacle) {
    s.emplace_back(kObstacleStage);
  }
  if (pc.lane) {
    s.emplace_back(kLaneStage);
  }
  return s;
}

}  // namespace detail

/// Camera source in the calling process, one process (or thread) per enabled
/// stage, all connected by the configured transport. The source paces frames
/// at the scene's rate cap and ends the stream with an end-of-stream marker.
inline PipelineResult run_pipeline(
  const PipelineConfig & pc, const Config & cfg, const SceneSpec & spec)
{
  pc.validate();
  if (spec.frame_count == 0) {
    throw Error(Errc::invalid_spec, "frame count must be > 0");
  }
  SceneRenderer renderer(cfg, spec);
  const std::size_t w = spec.width;
  const std::size_t h = spec.height;

  detail::Resources res;
  res.names = detail::make_run_names();
  res.camera_size = camera_message_size(w, h);
  res.cloud_size = cloud_message_size(w, h);
  res.grid_size = grid_message_size(cfg.obstacle.rows, cfg.obstacle.cols);
  const auto pool = cfg.transport.pool_capacity;
  const auto depth = cfg.transport.queue_depth;
  if (pc.transport == TransportKind::loaned) {
    res.topics.push_back(transport::Topic::create({res.names.camera, res.camera_size, pool, depth}));
    res.topics.push_back(transport::Topic::create({res.names.cloud, res.cloud_size, pool, depth}));
    res.topics.push_back(transport::Topic::create({res.names.grid, res.grid_size, pool, depth}));
    res.topics.push_back(
      transport::Topic::create({res.names.trajectory, kTrajectoryMessageSize, pool, depth}));
  } else {
    res.camera_pub = std::make_unique<transport::CopyPublisher>(0, res.camera_size);
    res.cloud_pub = std::make_unique<transport::CopyPublisher>(0, res.cloud_size);
    res.grid_pub = std::make_unique<transport::CopyPublisher>(0, res.grid_size);
    res.trajectory_pub = std::make_unique<transport::CopyPublisher>(0, kTrajectoryMessageSize);
  }

  const auto stages = detail::enabled_stages(pc);
  const std::size_t camera_subscribers = (pc.pointcloud ? 1 : 0) + (pc.lane ? 1 : 0);
  detail::Pipe ready;
  const auto scratch = std::filesystem::temp_directory_path() / ("adunit-" + res.names.camera);
  std::filesystem::create_directories(scratch);

  PipelineResult result;
  result.transport = pc.transport;
  {
    detail::StageGroup group(pc.processes, scratch);
    for (const auto & name : stages) {
      group.launch(
        name, [&pc, &cfg, &res, &ready, name] {
          return detail::stage_main(name, pc, cfg, res, ready.write_end());
        });
    }
    if (!ready.wait_for(stages.size(), pc.stage_timeout)) {
      throw Error(Errc::spawn_failure, "stages did not become ready");
    }

    std::unique_ptr<OutPort> camera;
    if (pc.transport == TransportKind::loaned) {
      camera = std::make_unique<LoanedOutPort>(res.topics[0]);
    } else {
      if (!res.camera_pub->wait_for_subscribers(camera_subscribers, pc.stage_timeout)) {
        throw Error(Errc::spawn_failure, "stages never connected to the camera topic");
      }
      camera = std::make_unique<CopyOutPort>(*res.camera_pub, res.camera_size);
    }

    const auto period = std::chrono::nanoseconds(
      static_cast<std::int64_t>(1e9 / spec.fps_cap));
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t start = now_ns();
    for (std::size_t i = 0; i < spec.frame_count; ++i) {
      std::this_thread::sleep_until(t0 + period * static_cast<std::int64_t>(i));
      auto buf = camera->acquire();
      const auto bufs = camera_buffers(buf, w, h);
      renderer.render_into(i, bufs.depth_mm, bufs.color);
      MessageHeader mh {};
      mh.seq = i + 1;
      mh.kind = MessageKind::camera;
      mh.body_size = camera_body_size(w, h);
      mh.width = static_cast<std::uint32_t>(w);
      mh.height = static_cast<std::uint32_t>(h);
      mh.t_publish_ns = now_ns();
      write_header(buf, mh);
      camera->send(camera_message_size(w, h));
      ++result.frames_published;
    }
    auto buf = camera->acquire();
    MessageHeader eos {};
    eos.seq = spec.frame_count + 1;
    eos.kind = MessageKind::camera;
    eos.flags = kEndOfStream;
    eos.width = static_cast<std::uint32_t>(w);
    eos.height = static_cast<std::uint32_t>(h);
    eos.t_publish_ns = now_ns();
    write_header(buf, eos);
    camera->send(kHeaderSize);

    result.stages = group.collect();
    result.wall_seconds = static_cast<double>(now_ns() - start) / 1e9;
  }
  for (const auto & t : res.topics) {
    if (t.free_count() != t.pool_capacity()) {
      result.pool_full = false;
    }
  }
  return result;
}

}  // namespace adunit::harness

#endif  // ADUNIT__HARNESS__PIPELINE_HPP_
