#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "edgeai/config.hpp"

namespace edgeai {

struct Prediction {
  std::int64_t row_id = 0;
  double predicted = 0.0;
  double confidence = 1.0;
  std::int64_t model_version = 0;
  std::int64_t inference_latency_us = 0;

  bool operator==(const Prediction&) const = default;
};

enum class StatusFlag { OK, NonOK };

[[nodiscard]] constexpr std::string_view to_string(StatusFlag flag) noexcept
{
  return flag == StatusFlag::OK ? "OK" : "NonOK";
}

// Rows without an expected target are OK.
[[nodiscard]] StatusFlag classify(const Prediction& prediction, std::optional<double> target,
                                  const DeviationPolicy& policy) noexcept;

}  // namespace edgeai
