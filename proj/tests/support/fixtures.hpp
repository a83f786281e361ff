#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <thread>

#include "edgeai/config.hpp"
#include "edgeai/ingest.hpp"

namespace edgeai::testing {

// Four bounded features, target "yield".
inline FeatureSchema plant_schema()
{
  FeatureSchema schema;
  schema.features = {
      {"temperature", "C", true, -40.0, 150.0},
      {"pressure", "bar", true, 0.0, 100.0},
      {"flow", "l/min", true, 0.0, 500.0},
      {"vibration", "mm/s", false, 0.0, 50.0},
  };
  schema.target_name = "yield";
  return schema;
}

inline DeploymentConfig plant_config(int broker_port = 1883)
{
  DeploymentConfig config;
  config.broker_host = "127.0.0.1";
  config.broker_port = broker_port;
  config.client_id = "test";
  config.topic_prefix = "plant1";
  config.feature_schema = plant_schema();
  config.deviation_policy = {DeviationMode::Percentage, 0.05};
  config.replay_rate_hz = 10.0;
  config.gateway_bind = "127.0.0.1:0";
  return config;
}

// Ground truth near 100 with noise sized for a 5% policy.
inline SensorSimSpec plant_sim(std::uint64_t seed = 1)
{
  SensorSimSpec spec;
  spec.features = {{20.0, 2.0, 0.0}, {30.0, 3.0, 0.0}, {40.0, 4.0, 0.0}, {10.0, 1.0, 0.0}};
  spec.true_weights = {1.0, 0.5, 0.5, 2.0};
  spec.true_bias = 25.0;
  spec.target_noise_stddev = 1.0;
  spec.seed = seed;
  return spec;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir()
  {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("edgeai-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir()
  {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline bool wait_until(const std::function<bool()>& condition,
                       std::chrono::milliseconds timeout = std::chrono::seconds(5))
{
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (!condition()) {
    if (std::chrono::steady_clock::now() > deadline) {
      return false;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return true;
}

}  // namespace edgeai::testing
