#include "edgeai/latency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "edgeai/errors.hpp"

namespace edgeai {

namespace {

double rank_in_sorted(const std::vector<double>& sorted, double percent)
{
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(percent * n / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

}  // namespace

double nearest_rank(std::vector<double> samples, double percent)
{
  if (samples.empty()) {
    throw Error(Errc::NoSamples, "latency", "no latency samples");
  }
  std::sort(samples.begin(), samples.end());
  return rank_in_sorted(samples, percent);
}

LatencyStats latency_stats(std::vector<double> samples_ms)
{
  if (samples_ms.empty()) {
    throw Error(Errc::NoSamples, "latency", "no latency samples");
  }
  std::sort(samples_ms.begin(), samples_ms.end());
  LatencyStats stats;
  stats.count = samples_ms.size();
  stats.p50 = rank_in_sorted(samples_ms, 50);
  stats.p95 = rank_in_sorted(samples_ms, 95);
  stats.p99 = rank_in_sorted(samples_ms, 99);
  stats.mean = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) /
               static_cast<double>(samples_ms.size());
  stats.max = samples_ms.back();
  return stats;
}

nlohmann::json latency_to_json(const LatencyStats& stats)
{
  return {{"count", stats.count}, {"p50_ms", stats.p50}, {"p95_ms", stats.p95},
          {"p99_ms", stats.p99},  {"mean_ms", stats.mean}, {"max_ms", stats.max}};
}

}  // namespace edgeai
