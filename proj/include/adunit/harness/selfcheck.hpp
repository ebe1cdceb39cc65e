#ifndef ADUNIT__HARNESS__SELFCHECK_HPP_
#define ADUNIT__HARNESS__SELFCHECK_HPP_

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "adunit/config.hpp"
#include "adunit/error.hpp"
#include "adunit/harness/pipeline.hpp"
#include "adunit/harness/scene.hpp"
#include "adunit/lane/lane.hpp"
#include "adunit/lane/polyfit.hpp"
#include "adunit/obstacle.hpp"
#include "adunit/pointcloud.hpp"
#include "adunit/transport/loaned.hpp"

// Quick invariant checks run by `adunit check`. The full suites live in tests/.

namespace adunit::harness
{

struct CheckResult
{
  std::string name;
  bool ok {false};
  std::string detail;
};

namespace detail
{

inline std::string check_topic_name(const char * what)
{
  return make_run_names().camera + ".check." + what;
}

inline std::string check_loan_limit()
{
  auto topic = transport::Topic::create({check_topic_name("loans"), 64});
  auto pub = topic.advertise();
  for (int i = 0; i < 8; ++i) {
    (void)pub.borrow();
  }
  try {
    (void)pub.borrow();
  } catch (const Error & e) {
    if (e.code() == Errc::loans_exhausted) {
      return {};
    }
    throw;
  }
  return "9th borrow succeeded";
}

inline std::string check_subscriber_limit()
{
  auto topic = transport::Topic::create({check_topic_name("subs"), 64});
  std::vector<transport::Subscriber> subs;
  for (int i = 0; i < 127; ++i) {
    subs.push_back(topic.subscribe());
  }
  try {
    subs.push_back(topic.subscribe());
  } catch (const Error & e) {
    if (e.code() == Errc::too_many_subscribers) {
      return {};
    }
    throw;
  }
  return "128th subscription succeeded";
}

inline std::string check_refcounts()
{
  auto topic = transport::Topic::create({check_topic_name("refs"), 4096});
  auto pub = topic.advertise();
  std::vector<transport::Subscriber> subs;
  for (int i = 0; i < 3; ++i) {
    subs.push_back(topic.subscribe());
  }
  for (int m = 0; m < 20; ++m) {
    auto loan = pub.borrow();
    loan.mutable_payload()[0] = static_cast<std::byte>(m);
    pub.publish_loaned(loan);
    for (auto & s : subs) {
      if (auto h = s.take_loaned(false, {})) {
        s.return_loaned(*h);
      }
    }
  }
  if (topic.free_count() != topic.pool_capacity()) {
    return "free pool " + std::to_string(topic.free_count()) + " of " +
           std::to_string(topic.pool_capacity()) + " after quiescence";
  }
  return {};
}

inline std::string check_size_laws()
{
  if (serialized_size(640 * 480) != 4915200) {
    return "cloud size law broken";
  }
  const ObstacleGrid g = rasterize_grid(std::span<const Point3> {}, ObstacleBox {});
  if (g.counts.size() != 234) {
    return "grid payload is " + std::to_string(g.counts.size()) + " bytes";
  }
  return {};
}

inline std::string check_polyfit()
{
  const lane::PolyCoeffs truth {{12.5, -0.75, 0.004}};
  std::vector<lane::Sample> pts;
  for (int i = 0; i < 480; i += 7) {
    pts.push_back({double(i), truth(double(i))});
  }
  const auto fit = lane::polyfit(pts, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    if (std::abs(fit.a[i] - truth.a[i]) > 1e-9 * std::max(1.0, std::abs(truth.a[i]))) {
      return "coefficient " + std::to_string(i) + " off";
    }
  }
  if (lane::normal_equation_residual(pts, fit) > 1e-6) {
    return "normal-equation residual too large";
  }
  return {};
}

inline std::string check_colors()
{
  const lane::ColorThresholds t;
  if (lane::classify(lane::rgb_to_hsv(Rgb {255, 255, 255}), t) != lane::LaneLabel::white) {
    return "white paint not classified white";
  }
  if (lane::classify(lane::rgb_to_hsv(Rgb {255, 210, 0}), t) != lane::LaneLabel::yellow) {
    return "yellow paint not classified yellow";
  }
  if (lane::classify(lane::rgb_to_hsv(Rgb {90, 90, 90}), t) != lane::LaneLabel::none) {
    return "asphalt classified as lane";
  }
  return {};
}

inline std::string check_transport_independence(const Config & cfg)
{
  SceneSpec spec = default_scene(8, 30.0, 7);
  spec.width = cfg.camera.width;
  spec.height = cfg.camera.height;
  PipelineConfig pc;
  pc.processes = true;
  pc.transport = TransportKind::loaned;
  const auto a = run_pipeline(pc, cfg, spec);
  pc.transport = TransportKind::copy;
  const auto b = run_pipeline(pc, cfg, spec);
  if (!a.pool_full) {
    return "loaned pool not full after run";
  }
  for (const auto stage : {kObstacleStage, kLaneStage}) {
    const auto * sa = a.stage(stage);
    const auto * sb = b.stage(stage);
    if (!sa || !sb || sa->outputs != sb->outputs || sa->outputs.size() != spec.frame_count) {
      return std::string(stage) + " outputs differ between transports";
    }
  }
  return {};
}

}  // namespace detail

inline std::vector<CheckResult> run_self_checks(const Config & cfg)
{
  const std::vector<std::pair<std::string, std::function<std::string()>>> checks {
    {"transport loan limit", detail::check_loan_limit},
    {"transport subscriber limit", detail::check_subscriber_limit},
    {"transport refcount conservation", detail::check_refcounts},
    {"cloud and grid size laws", detail::check_size_laws},
    {"polynomial recovery", detail::check_polyfit},
    {"lane colour classes", detail::check_colors},
    {"transport independence", [&cfg] {return detail::check_transport_independence(cfg);}},
  };
  std::vector<CheckResult> out;
  for (const auto & [name, fn] : checks) {
    CheckResult r {name, false, {}};
    try {
      r.detail = fn();
      r.ok = r.detail.empty();
    } catch (const std::exception & e) {
      r.detail = e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace adunit::harness

#endif  // ADUNIT__HARNESS__SELFCHECK_HPP_
