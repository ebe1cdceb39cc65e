#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "adunit/harness/latency.hpp"
#include "adunit/harness/pipeline.hpp"
#include "adunit/harness/report.hpp"
#include "adunit/harness/scene.hpp"
#include "adunit/harness/selfcheck.hpp"
#include "adunit/pointcloud.hpp"

using namespace adunit;
using namespace adunit::harness;
namespace fs = std::filesystem;

namespace
{

SceneSpec small_scene(std::size_t frames, double fps)
{
  SceneSpec s = default_scene(frames, fps, 7);
  return s;
}

BenchRecord rec(std::string stage, std::uint64_t seq, double pub_ms, double take_ms, double done_ms)
{
  BenchRecord r;
  r.stage = std::move(stage);
  r.seq = seq;
  r.t_publish_ns = static_cast<std::uint64_t>(pub_ms * 1e6);
  r.t_take_ns = static_cast<std::uint64_t>(take_ms * 1e6);
  r.t_done_ns = static_cast<std::uint64_t>(done_ms * 1e6);
  return r;
}

struct Shell
{
  int code;
  std::string out;
};

Shell shell(const std::string & args)
{
  const std::string cmd = std::string(ADUNIT_CLI) + " " + args + " 2>&1";
  Shell s {-1, {}};
  FILE * p = ::popen(cmd.c_str(), "r");
  if (p == nullptr) {
    return s;
  }
  char buf[4096];
  while (std::fgets(buf, sizeof(buf), p) != nullptr) {
    s.out += buf;
  }
  const int st = ::pclose(p);
  s.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return s;
}

fs::path scratch_dir(const char * stem)
{
  const auto d = fs::temp_directory_path() / (std::string("adunit-ht-") + stem + "-" +
    std::to_string(::getpid()));
  fs::remove_all(d);
  return d;
}

}  // namespace

// --- scene -----------------------------------------------------------------------------

TEST(Scene, Deterministic)
{
  const Config cfg;
  const SceneRenderer a(cfg, small_scene(3, 30));
  const SceneRenderer b(cfg, small_scene(3, 30));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.render(i).first.data, b.render(i).first.data);
    EXPECT_EQ(a.render(i).second.data, b.render(i).second.data);
  }
  SceneSpec other = small_scene(3, 30);
  other.seed = 8;
  EXPECT_NE(SceneRenderer(cfg, other).render(0).second.data, a.render(0).second.data);
}

TEST(Scene, EmptySceneIsBackground)
{
  SceneSpec s;
  s.frame_count = 1;
  const auto [depth, color] = SceneRenderer(Config {}, s).render(0);
  for (auto mm : depth.data) {
    ASSERT_EQ(mm, 10000);
  }
}

TEST(Scene, CubeTwoMetersAhead)
{
  const Config cfg;
  SceneSpec s;
  s.frame_count = 1;
  s.obstacles.push_back({2.25, 0.0, 0.5, 0.5, 0.5, 0.0});
  const auto frames = generate_scene(cfg, s);
  const auto & depth = frames[0].first;
  EXPECT_NEAR(depth.at(240, 320), 2.0, 1e-3);
  const auto cloud = generate_pointcloud(cfg.calibration, depth.view(), frames[0].second.view());
  const auto & p = cloud.points[240 * 640 + 320];
  EXPECT_NEAR(p.z, 2.0, 1e-3);
  EXPECT_NEAR(p.x, 0.0, 1e-3);
  EXPECT_EQ(frames[0].second.at(240, 320), kObstacleColor);
}

TEST(Scene, MovingObstacleApproaches)
{
  const Config cfg;
  SceneSpec s;
  s.frame_count = 2;
  s.obstacles.push_back({3.0, 0.0, 0.5, 0.5, 0.5, 0.1});
  const SceneRenderer r(cfg, s);
  EXPECT_NEAR(r.render(0).first.at(240, 320), 2750, 1);
  EXPECT_NEAR(r.render(1).first.at(240, 320), 2650, 1);
}

TEST(Scene, InvalidSpec)
{
  SceneSpec s;
  s.width = 320;
  try {
    SceneRenderer r(Config {}, s);
    FAIL();
  } catch (const Error & e) {
    EXPECT_EQ(e.code(), Errc::invalid_spec);
  }
  s = SceneSpec {};
  s.fps_cap = 0.0;
  EXPECT_THROW(SceneRenderer(Config {}, s), Error);
  s = SceneSpec {};
  s.frame_count = 0;
  PipelineConfig pc;
  try {
    (void)run_pipeline(pc, Config {}, s);
    FAIL();
  } catch (const Error & e) {
    EXPECT_EQ(e.code(), Errc::invalid_spec);
  }
}

// --- pipeline --------------------------------------------------------------------------

TEST(Pipeline, PointcloudOnlyDeliversEveryFrameInOrder)
{
  PipelineConfig pc;
  pc.obstacle = pc.lane = false;
  const auto r = run_pipeline(pc, Config {}, small_scene(100, 30));
  ASSERT_EQ(r.stages.size(), 1u);
  const auto & recs = r.stages[0].records;
  ASSERT_EQ(recs.size(), 100u);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i].seq, i + 1);
    EXPECT_LE(recs[i].t_publish_ns, recs[i].t_take_ns);
    EXPECT_LE(recs[i].t_take_ns, recs[i].t_done_ns);
  }
  EXPECT_EQ(r.frames_published, 100u);
  EXPECT_TRUE(r.pool_full);
}

TEST(Pipeline, TransportsAgreeAndThreadsAgree)
{
  const Config cfg;
  const auto spec = small_scene(12, 60);
  PipelineConfig pc;
  const auto loaned = run_pipeline(pc, cfg, spec);
  pc.transport = TransportKind::copy;
  const auto copy = run_pipeline(pc, cfg, spec);
  pc.transport = TransportKind::loaned;
  pc.processes = false;
  const auto threads = run_pipeline(pc, cfg, spec);
  for (auto name : {kPointcloudStage, kObstacleStage, kLaneStage}) {
    const auto * a = loaned.stage(name);
    const auto * b = copy.stage(name);
    const auto * c = threads.stage(name);
    ASSERT_TRUE(a && b && c) << name;
    EXPECT_EQ(a->outputs.size(), 12u);
    EXPECT_EQ(a->outputs, b->outputs) << name;
    EXPECT_EQ(a->outputs, c->outputs) << name;
  }
  EXPECT_TRUE(loaned.pool_full);
  EXPECT_TRUE(threads.pool_full);
  // The approaching box sits in the footprint from the first frame.
  EXPECT_EQ(loaned.stage(kObstacleStage)->stop_commands, 12u);
  EXPECT_LE(loaned.stage(kLaneStage)->max_residual, 1e-6);
}

TEST(Pipeline, KernelThreadsDoNotChangeOutput)
{
  const Config cfg;
  const auto spec = small_scene(4, 60);
  PipelineConfig pc;
  pc.obstacle = pc.lane = false;
  const auto one = run_pipeline(pc, cfg, spec);
  pc.kernel_threads = 3;
  const auto three = run_pipeline(pc, cfg, spec);
  EXPECT_EQ(one.stage(kPointcloudStage)->outputs, three.stage(kPointcloudStage)->outputs);
}

TEST(Pipeline, ConfigValidation)
{
  PipelineConfig pc;
  pc.pointcloud = false;
  pc.lane = false;
  try {
    pc.validate();
    FAIL();
  } catch (const Error & e) {
    EXPECT_EQ(e.code(), Errc::invalid_config);
  }
  pc.obstacle = false;
  EXPECT_THROW(pc.validate(), Error);
  pc.lane = true;
  EXPECT_NO_THROW(pc.validate());
}

TEST(Pipeline, StageResultJsonRoundTrip)
{
  StageResult s;
  s.stage = "lane";
  s.transport = TransportKind::copy;
  s.records.push_back(rec("lane", 1, 1.0, 2.0, 3.5));
  s.outputs[1] = "abcd";
  s.cpu_seconds = 0.25;
  s.wall_seconds = 1.5;
  s.max_residual = 1e-12;
  s.stop_commands = 3;
  const auto back = harness::detail::stage_from_json(harness::detail::stage_to_json(s));
  EXPECT_EQ(back.stage, s.stage);
  EXPECT_EQ(back.transport, s.transport);
  ASSERT_EQ(back.records.size(), 1u);
  EXPECT_EQ(back.records[0].t_done_ns, s.records[0].t_done_ns);
  EXPECT_EQ(back.outputs, s.outputs);
  EXPECT_EQ(back.cpu_seconds, 0.25);
  EXPECT_EQ(back.stop_commands, 3u);
}

// --- latency ---------------------------------------------------------------------------

TEST(Latency, BothTransportsDeliverEveryMessage)
{
  LatencyConfig cfg;
  cfg.messages = 50;
  cfg.message_size = 64 * 1024;
  cfg.interval = std::chrono::microseconds(500);
  for (auto t : {TransportKind::loaned, TransportKind::copy}) {
    const auto r = measure_latency(t, cfg);
    EXPECT_EQ(r.sent, 50u);
    EXPECT_EQ(r.latency_ms.size(), 50u);
    EXPECT_GT(r.mean_ms(), 0.0);
    EXPECT_LE(r.min_ms(), r.mean_ms());
    EXPECT_LE(r.mean_ms(), r.max_ms());
  }
}

// --- report ----------------------------------------------------------------------------

TEST(Report, ThirtyFramesInOneSecond)
{
  std::vector<BenchRecord> recs;
  for (int i = 0; i < 31; ++i) {
    recs.push_back(rec("pointcloud", i + 1, i * 1000.0 / 30.0, i * 1000.0 / 30.0 + 1.0,
      i * 1000.0 / 30.0 + 4.0));
  }
  EXPECT_NEAR(delivered_fps(recs), 30.0, 1e-6);
  const auto s = summarize(std::span<const BenchRecord>(recs));
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].frames, 31u);
  EXPECT_NEAR(s[0].turnaround_ms.mean, 3.0, 1e-6);
  EXPECT_NEAR(s[0].latency_ms.mean, 1.0, 1e-6);
}

TEST(Report, HandComputedStats)
{
  const std::vector<BenchRecord> recs {
    rec("lane", 1, 0.0, 1.0, 3.0), rec("lane", 2, 10.0, 12.0, 16.0), rec("lane", 3, 20.0, 23.0, 24.0)};
  const auto s = summarize(std::span<const BenchRecord>(recs));
  ASSERT_EQ(s.size(), 1u);
  EXPECT_NEAR(s[0].turnaround_ms.min, 1.0, 1e-9);
  EXPECT_NEAR(s[0].turnaround_ms.mean, 7.0 / 3.0, 1e-9);
  EXPECT_NEAR(s[0].turnaround_ms.max, 4.0, 1e-9);
  EXPECT_NEAR(s[0].latency_ms.mean, 2.0, 1e-9);
  EXPECT_NEAR(s[0].fps, 2.0 / 0.022, 1e-6);
  EXPECT_EQ(delivered_fps(std::span<const BenchRecord>(recs.data(), 1)), 0.0);
}

TEST(Report, GroupsByStageAndTransport)
{
  std::vector<BenchRecord> recs {rec("lane", 1, 0, 1, 2), rec("obstacle", 1, 0, 1, 2)};
  auto c = rec("lane", 1, 0, 1, 2);
  c.transport = TransportKind::copy;
  recs.push_back(c);
  EXPECT_EQ(summarize(std::span<const BenchRecord>(recs)).size(), 3u);
}

TEST(Report, CsvHeaderAndRows)
{
  const std::vector<BenchRecord> recs {rec("lane", 7, 1.0, 2.0, 5.0)};
  std::ostringstream os;
  write_csv(os, recs);
  std::istringstream in(os.str());
  std::string header;
  std::string row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "stage,transport,seq,t_publish_ns,t_take_ns,t_done_ns,turnaround_ms,latency_ms");
  EXPECT_EQ(row, "lane,loaned,7,1000000,2000000,5000000,3.000000,1.000000");
}

// --- self checks and CLI ---------------------------------------------------------------

TEST(SelfCheck, AllPass)
{
  for (const auto & r : run_self_checks(Config {})) {
    EXPECT_TRUE(r.ok) << r.name << ": " << r.detail;
  }
}

TEST(Cli, FramesZeroIsUsageError)
{
  const auto s = shell("run --frames 0");
  EXPECT_NE(s.code, 0);
  EXPECT_NE(s.code, 1);
  EXPECT_NE(s.out.find("frames"), std::string::npos);
}

TEST(Cli, UnknownTransportAndStage)
{
  EXPECT_NE(shell("run --transport carrier-pigeon").code, 0);
  const auto s = shell("run --frames 2 --stages pointcloud,radar --out " + scratch_dir("stage").string());
  EXPECT_EQ(s.code, 1);
  EXPECT_NE(s.out.find("error: InvalidConfig: unknown stage"), std::string::npos) << s.out;
}

TEST(Cli, MissingConfigFile)
{
  EXPECT_NE(shell("run --config /nonexistent/adunit.json").code, 0);
}

TEST(Cli, CheckExitsZero)
{
  const auto s = shell("check");
  EXPECT_EQ(s.code, 0) << s.out;
  EXPECT_EQ(s.out.find("FAIL"), std::string::npos) << s.out;
}

TEST(Cli, GenSceneWritesFrames)
{
  const auto dir = scratch_dir("gen");
  const auto s = shell("gen-scene --frames 2 --out " + dir.string());
  ASSERT_EQ(s.code, 0) << s.out;
  EXPECT_EQ(fs::file_size(dir / "depth_0001.pgm") > 640u * 480u * 2u, true);
  EXPECT_TRUE(fs::exists(dir / "color_0000.ppm"));
  fs::remove_all(dir);
}

TEST(Cli, RunWritesRecords)
{
  const auto dir = scratch_dir("run");
  const auto s = shell("run --frames 10 --fps-cap 60 --transport copy --out " + dir.string());
  ASSERT_EQ(s.code, 0) << s.out;
  std::ifstream in(dir / "records.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  EXPECT_EQ(line, kCsvHeader);
  while (std::getline(in, line)) {
    ++rows;
  }
  EXPECT_EQ(rows, 30u);
  EXPECT_TRUE(fs::exists(dir / "summary.txt"));
  fs::remove_all(dir);
}

TEST(Cli, BenchReportsBothTransports)
{
  const auto dir = scratch_dir("bench");
  const auto s = shell("bench --frames 20 --fps-cap 60 --out " + dir.string());
  ASSERT_EQ(s.code, 0) << s.out;
  EXPECT_NE(s.out.find("FPS loaned/copy"), std::string::npos);
  for (const char * stage : {"pointcloud", "obstacle", "lane"}) {
    EXPECT_NE(s.out.find(std::string(stage) + "   "), std::string::npos) << stage;
  }
  std::ifstream in(dir / "bench.csv");
  std::string line;
  std::size_t loaned = 0;
  std::size_t copy = 0;
  while (std::getline(in, line)) {
    loaned += line.find(",loaned,") != std::string::npos;
    copy += line.find(",copy,") != std::string::npos;
  }
  EXPECT_EQ(loaned, 60u);
  EXPECT_EQ(copy, 60u);
  fs::remove_all(dir);
}
