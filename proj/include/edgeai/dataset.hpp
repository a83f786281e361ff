#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace edgeai {

// Row-major labeled data. Missing values are NaN.
struct Dataset {
  std::vector<std::string> feature_names;
  std::vector<std::vector<double>> x;
  std::vector<double> y;

  [[nodiscard]] std::size_t size() const noexcept { return y.size(); }
  [[nodiscard]] std::size_t dims() const noexcept { return feature_names.size(); }
  void add(std::vector<double> features, double target)
  {
    x.push_back(std::move(features));
    y.push_back(target);
  }
  bool operator==(const Dataset&) const = default;
};

}  // namespace edgeai
