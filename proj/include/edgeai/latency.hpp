#pragma once

#include <cstddef>
#include <vector>

#include <nlohmann/json.hpp>

namespace edgeai {

struct LatencyStats {
  std::size_t count = 0;
  double p50 = 0.0;
  double p95 = 0.0;
  double p99 = 0.0;
  double mean = 0.0;
  double max = 0.0;
};

// Nearest-rank percentile: the smallest sample with at least p% of the
// samples at or below it. Throws Error(NoSamples) on an empty input.
[[nodiscard]] double nearest_rank(std::vector<double> samples, double percent);
[[nodiscard]] LatencyStats latency_stats(std::vector<double> samples_ms);
[[nodiscard]] nlohmann::json latency_to_json(const LatencyStats& stats);

}  // namespace edgeai
