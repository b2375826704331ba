#include "ffield/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ffield/renderer.hpp"
#include "ffield/segmentation.hpp"

namespace ffield {
namespace {

template <typename F>
ThroughputStats Time(std::size_t items, int repeats, F&& body) {
  ThroughputStats s;
  s.items = items;
  s.repeats = repeats;
  double total = 0.0;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    body();
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    total += ms;
    s.min_ms = r == 0 ? ms : std::min(s.min_ms, ms);
    s.max_ms = std::max(s.max_ms, ms);
  }
  s.mean_ms = total / repeats;
  s.per_second = s.mean_ms > 0.0 ? items / (s.mean_ms * 1e-3) : 0.0;
  return s;
}

}  // namespace

BenchmarkReport RunBenchmark(const FieldModel<float>& model, const BenchmarkOptions& options) {
  if (options.point_batch == 0 || options.width <= 0 || options.height <= 0 ||
      options.samples <= 0 || options.repeats <= 0) {
    Fail(ErrorCode::kInvalidArgument, "benchmark: sizes and repeats must be positive");
  }
  BenchmarkReport report;
  report.samples = options.samples;
  report.parameters = model.parameter_count();
#ifdef _OPENMP
  report.threads = omp_get_max_threads();
#endif

  std::mt19937_64 rng(options.seed);
  const SceneBounds& b = model.bounds();
  std::vector<Vec3> points(options.point_batch);
  for (Vec3& p : points) {
    for (int a = 0; a < 3; ++a) {
      p[a] = std::uniform_real_distribution<double>(b.min[a], b.max[a])(rng);
    }
  }
  report.points = Time(points.size(), options.repeats, [&] { QueryPointFeatures(model, points); });

  // A camera at the box center looking along +x.
  const Vec3 eye = 0.5 * (b.min + b.max);
  const Pose pose = LookAt(eye, eye + Vec3::UnitX(), Vec3::UnitZ());
  CameraIntrinsics k;
  k.width = options.width;
  k.height = options.height;
  k.fx = k.fy = 0.5 * options.width;
  k.cx = 0.5 * options.width;
  k.cy = 0.5 * options.height;
  RenderOptions ro;
  ro.maps = kMapFeature | kMapOpacity;
  ro.samples = options.samples;
  const std::size_t pixels = static_cast<std::size_t>(options.width) * options.height;
  report.rays = Time(pixels, options.repeats, [&] { RenderMaps(model, pose, k, ro); });
  return report;
}

std::string FormatBenchmark(const BenchmarkReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "parameters %zu, threads %d, samples per ray %d\n"
                "point queries: %zu per call, %.3f ms mean (min %.3f, max %.3f), %.4g per second\n"
                "ray queries:   %zu per frame, %.3f ms mean (min %.3f, max %.3f), %.4g pixels per second\n",
                r.parameters, r.threads, r.samples, r.points.items, r.points.mean_ms,
                r.points.min_ms, r.points.max_ms, r.points.per_second, r.rays.items,
                r.rays.mean_ms, r.rays.min_ms, r.rays.max_ms, r.rays.per_second);
  return buf;
}

std::string BenchmarkJson(const BenchmarkReport& r) {
  auto stats = [](const ThroughputStats& s) {
    return nlohmann::json{{"items", s.items},     {"repeats", s.repeats}, {"mean_ms", s.mean_ms},
                          {"min_ms", s.min_ms},   {"max_ms", s.max_ms},   {"per_second", s.per_second}};
  };
  const nlohmann::json j{{"parameters", r.parameters},
                         {"threads", r.threads},
                         {"samples", r.samples},
                         {"point_queries", stats(r.points)},
                         {"ray_queries", stats(r.rays)}};
  return j.dump(2);
}

}  // namespace ffield
