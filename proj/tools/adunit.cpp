// adunit: scene generation, pipeline runs, transport benchmark, self checks.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adunit/config.hpp"
#include "adunit/error.hpp"
#include "adunit/harness/latency.hpp"
#include "adunit/harness/pipeline.hpp"
#include "adunit/harness/report.hpp"
#include "adunit/harness/scene.hpp"
#include "adunit/harness/selfcheck.hpp"
#include "adunit/netpbm.hpp"

namespace fs = std::filesystem;
using namespace adunit;
using namespace adunit::harness;

namespace
{

struct Options
{
  std::string config;
  std::string transport {"loaned"};
  std::size_t frames {0};  // 0: subcommand default
  double fps_cap {30.0};
  bool threads {false};
  std::string out {"adunit-out"};
  std::uint64_t seed {1};
  std::vector<std::string> stages {"pointcloud", "obstacle", "lane"};
  unsigned kernel_threads {1};
};

Config load(const Options & o)
{
  return o.config.empty() ? Config {} : load_config(o.config);
}

SceneSpec scene_for(const Options & o, const Config & cfg)
{
  SceneSpec spec = default_scene(o.frames, o.fps_cap, o.seed);
  spec.width = cfg.camera.width;
  spec.height = cfg.camera.height;
  return spec;
}

PipelineConfig pipeline_for(const Options & o, TransportKind t)
{
  PipelineConfig pc;
  pc.transport = t;
  pc.processes = !o.threads;
  pc.kernel_threads = o.kernel_threads;
  pc.pointcloud = pc.obstacle = pc.lane = false;
  for (const auto & s : o.stages) {
    if (s == kPointcloudStage) {
      pc.pointcloud = true;
    } else if (s == kObstacleStage) {
      pc.obstacle = true;
    } else if (s == kLaneStage) {
      pc.lane = true;
    } else {
      throw Error(Errc::invalid_config, "unknown stage '" + s + "'");
    }
  }
  return pc;
}

void write_file(const fs::path & path, const std::string & text)
{
  std::ofstream out(path);
  if (!out) {
    throw Error(Errc::io_error, "cannot write " + path.string());
  }
  out << text;
}

int cmd_gen_scene(const Options & o)
{
  const Config cfg = load(o);
  const SceneRenderer renderer(cfg, scene_for(o, cfg));
  fs::create_directories(o.out);
  for (std::size_t i = 0; i < o.frames; ++i) {
    const auto [depth, color] = renderer.render(i);
    char name[64];
    std::snprintf(name, sizeof(name), "depth_%04zu.pgm", i);
    netpbm::write_pgm16(fs::path(o.out) / name, depth.view());
    std::snprintf(name, sizeof(name), "color_%04zu.ppm", i);
    netpbm::write_ppm(fs::path(o.out) / name, color.view());
  }
  std::printf("wrote %zu frames to %s\n", o.frames, o.out.c_str());
  return 0;
}

int cmd_run(const Options & o)
{
  const Config cfg = load(o);
  const auto result =
    run_pipeline(pipeline_for(o, parse_transport(o.transport)), cfg, scene_for(o, cfg));
  const auto records = result.records();
  const auto summary = summarize(result);
  fs::create_directories(o.out);
  std::ostringstream csv;
  write_csv(csv, records);
  write_file(fs::path(o.out) / "records.csv", csv.str());
  std::ostringstream table;
  write_table(table, summary);
  write_file(fs::path(o.out) / "summary.txt", table.str());
  std::cout << table.str();
  for (const auto & s : result.stages) {
    if (s.stage == kObstacleStage) {
      std::printf("obstacle stop commands: %llu\n", static_cast<unsigned long long>(s.stop_commands));
    }
    if (s.stage == kLaneStage) {
      std::printf("lane max normal-equation residual: %.3g\n", s.max_residual);
    }
  }
  if (!result.pool_full) {
    std::fprintf(stderr, "error: loaned pool not full after the run\n");
    return 1;
  }
  return 0;
}

int cmd_bench(const Options & o)
{
  const Config cfg = load(o);
  const SceneSpec spec = scene_for(o, cfg);
  const auto loaned = run_pipeline(pipeline_for(o, TransportKind::loaned), cfg, spec);
  const auto copy = run_pipeline(pipeline_for(o, TransportKind::copy), cfg, spec);
  const auto lat_loaned = measure_latency(TransportKind::loaned);
  const auto lat_copy = measure_latency(TransportKind::copy);

  auto records = loaned.records();
  const auto more = copy.records();
  records.insert(records.end(), more.begin(), more.end());
  const auto sl = summarize(loaned);
  const auto sc = summarize(copy);
  const auto rows = compare(sl, sc);

  std::ostringstream report;
  report << "frames per transport: " << spec.frame_count << ", rate cap " << spec.fps_cap
         << "/s, stages as " << (o.threads ? "threads" : "processes") << "\n\n";
  std::vector<StageSummary> all(sl);
  all.insert(all.end(), sc.begin(), sc.end());
  write_table(report, all);
  report << '\n';
  write_comparison(report, rows, std::make_pair(lat_loaned, lat_copy));

  fs::create_directories(o.out);
  std::ostringstream csv;
  write_csv(csv, records);
  write_file(fs::path(o.out) / "bench.csv", csv.str());
  write_file(fs::path(o.out) / "report.txt", report.str());
  std::cout << report.str();
  return 0;
}

int cmd_check(const Options & o)
{
  const Config cfg = load(o);
  bool ok = true;
  for (const auto & r : run_self_checks(cfg)) {
    std::printf("%s %s%s%s\n", r.ok ? "PASS" : "FAIL", r.name.c_str(), r.ok ? "" : ": ",
      r.detail.c_str());
    ok = ok && r.ok;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app {"adunit: zero-copy pub/sub perception pipeline and benchmark"};
  app.require_subcommand(1);
  Options o;

  auto common = [&o](CLI::App * sub, bool pipeline) {
      sub->add_option("--config", o.config, "JSON config file (defaults built in)")
      ->check(CLI::ExistingFile);
      sub->add_option("--frames", o.frames, "Frames to generate")->check(CLI::PositiveNumber);
      sub->add_option("--fps-cap", o.fps_cap, "Source frame rate cap")->check(CLI::PositiveNumber);
      sub->add_option("--seed", o.seed, "Scene seed");
      sub->add_option("--out", o.out, "Output directory");
      if (pipeline) {
        sub->add_flag("--processes,!--threads", [&o](std::int64_t n) {o.threads = n < 0;},
          "Run stages as processes (default) or threads");
        sub->add_option("--stages", o.stages, "Enabled stages")->delimiter(',');
        sub->add_option("--kernel-threads", o.kernel_threads, "Threads inside the point cloud kernel")
        ->check(CLI::PositiveNumber);
      }
    };

  auto * gen = app.add_subcommand("gen-scene", "Write synthetic depth/colour frames");
  common(gen, false);

  auto * run = app.add_subcommand("run", "Run the pipeline and write per-frame records");
  common(run, true);
  run->add_option("--transport", o.transport, "loaned or copy")
  ->check(CLI::IsMember({"loaned", "copy"}));

  auto * bench = app.add_subcommand("bench", "Compare both transports on every stage");
  common(bench, true);

  auto * check = app.add_subcommand("check", "Run quick invariant checks");
  check->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    return app.exit(e);
  }
  if (o.frames == 0) {
    o.frames = gen->parsed() ? 30 : 300;
  }

  try {
    if (gen->parsed()) {
      return cmd_gen_scene(o);
    }
    if (run->parsed()) {
      return cmd_run(o);
    }
    if (bench->parsed()) {
      return cmd_bench(o);
    }
    return cmd_check(o);
  } catch (const std::exception & e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
