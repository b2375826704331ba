#pragma once

#include <cstdint>
#include <string>

#include "ffield/field.hpp"

namespace ffield {

struct BenchmarkOptions {
  std::size_t point_batch = 65536;  // 3D queries per timed call
  int width = 160;                  // 2D ray queries per timed frame = width * height
  int height = 120;
  int samples = 256;
  int repeats = 3;
  std::uint64_t seed = 0;
};

struct ThroughputStats {
  std::size_t items = 0;       // queries per timed call
  int repeats = 0;
  double mean_ms = 0.0;        // latency per call
  double min_ms = 0.0;
  double max_ms = 0.0;
  double per_second = 0.0;     // items / mean latency
};

struct BenchmarkReport {
  ThroughputStats points;  // density + feature lookups at random positions
  ThroughputStats rays;    // feature + opacity maps, one query per pixel
  int samples = 0;
  int threads = 1;
  std::size_t parameters = 0;
};

// Times 3D point queries and 2D ray queries (N samples per ray) against a
// model. Numbers are reported, never compared to a threshold.
BenchmarkReport RunBenchmark(const FieldModel<float>& model, const BenchmarkOptions& options);

std::string FormatBenchmark(const BenchmarkReport& report);
std::string BenchmarkJson(const BenchmarkReport& report);

}  // namespace ffield
