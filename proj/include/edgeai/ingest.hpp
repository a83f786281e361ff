#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "edgeai/bus.hpp"
#include "edgeai/config.hpp"
#include "edgeai/dataset.hpp"

namespace edgeai {

struct ReplaySpec {
  std::filesystem::path csv_path;
  double rate_hz = 1.0;
  bool loop_forever = false;
};

struct ReplayReport {
  std::size_t rows_sent = 0;
  std::size_t rows_rejected = 0;
  std::chrono::milliseconds duration{0};
};

[[nodiscard]] nlohmann::json report_to_json(const ReplayReport& report);

// Maps CSV columns to schema positions. Columns are matched by name, in any
// order; the target column and a "ts" column are optional.
class CsvLayout {
 public:
  // Columns in schema order, optionally followed by the target.
  static CsvLayout schema_order(const FeatureSchema& schema, bool with_target);
  // Throws Error(HeaderMismatch) for unknown or duplicate columns, or when a
  // required feature has no column.
  static CsvLayout from_header(std::string_view header, const FeatureSchema& schema);

  [[nodiscard]] std::size_t columns() const noexcept { return names_.size(); }
  [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  friend Observation parse_csv_row(std::string_view, const CsvLayout&, const FeatureSchema&);
  std::vector<std::string> names_;
};

[[nodiscard]] std::vector<std::string_view> split_csv_line(std::string_view line);

// Row in schema order with an optional trailing target column. Empty cells
// are absent values. Throws ColumnCountMismatch, NonNumericValue(column) or
// the schema-validation codes.
[[nodiscard]] Observation parse_csv_row(std::string_view line, const FeatureSchema& schema);
[[nodiscard]] Observation parse_csv_row(std::string_view line, const CsvLayout& layout,
                                        const FeatureSchema& schema);

// Publishes one input message per data row on `topic`, uniformly paced at
// spec.rate_hz. Invalid rows are logged and skipped. Returns early when
// `stop` becomes true. Throws FileNotFound or HeaderMismatch.
ReplayReport replay_csv(const ReplaySpec& spec, const FeatureSchema& schema, BusSession& session,
                        const std::string& topic, const std::atomic<bool>* stop = nullptr);

struct FeatureGenerator {
  double base = 0.0;
  double noise_stddev = 0.0;
  double drift_per_step = 0.0;
};

struct AnomalySpec {
  double probability = 0.0;
  double magnitude_stddev_multiplier = 1.0;
};

struct SensorSimSpec {
  std::vector<FeatureGenerator> features;
  AnomalySpec anomaly;
  std::vector<double> true_weights;
  double true_bias = 0.0;
  double target_noise_stddev = 0.0;
  std::uint64_t seed = 0;
};

[[nodiscard]] nlohmann::json sim_spec_to_json(const SensorSimSpec& spec);
[[nodiscard]] SensorSimSpec sim_spec_from_json(const nlohmann::json& doc);

// Throws Error(SpecMismatch) when the spec does not fit the schema.
void check_sim_spec(const SensorSimSpec& spec, const FeatureSchema& schema);

// Linear ground truth plus noise. Drift is a sensor fault: it shifts the
// reported features but not the process that produces the target, so a
// drifting stream eventually disagrees with a model fit on clean data.
class SensorSimulator {
 public:
  struct Step {
    std::int64_t index = 0;
    std::vector<double> true_features;
    std::vector<double> observed_features;
    // Noiseless w·x + b over the true features.
    double true_target = 0.0;
    double target = 0.0;
    bool anomalous = false;
  };

  SensorSimulator(SensorSimSpec spec, const FeatureSchema& schema);

  Step next();
  [[nodiscard]] Observation observation(const Step& step) const;
  [[nodiscard]] std::int64_t steps_taken() const noexcept { return t_; }
  // Freezes the accumulated drift offset at its current value, as a sensor
  // that failed once and then stayed biased.
  void hold_drift() noexcept { drift_hold_ = t_; }

 private:
  SensorSimSpec spec_;
  std::size_t target_dims_;
  std::mt19937_64 rng_;
  std::int64_t t_ = 0;
  std::optional<std::int64_t> drift_hold_;
};

struct StreamOptions {
  // 0 publishes as fast as possible.
  double rate_hz = 0.0;
  const std::atomic<bool>* stop = nullptr;
};

// Emits n_steps observations on `topic`. Throws Error(SpecMismatch).
ReplayReport stream_sensor(const SensorSimSpec& spec, const FeatureSchema& schema,
                           BusSession& session, const std::string& topic, std::int64_t n_steps,
                           const StreamOptions& options = {});

// Training data from a CSV with the same layout rules as replay. Rows that
// fail validation or lack a target are skipped. Missing optional features
// are NaN. Throws FileNotFound or HeaderMismatch.
[[nodiscard]] Dataset read_dataset_csv(const std::filesystem::path& path, const FeatureSchema& schema);
// Header: feature names then the target name. Throws FileNotFound.
void write_dataset_csv(const Dataset& data, const std::string& target_name,
                       const std::filesystem::path& path);

// n labeled pairs from the same generator; nothing is published.
[[nodiscard]] Dataset generate_training_data(const SensorSimSpec& spec, const FeatureSchema& schema,
                                             std::size_t n);

}  // namespace edgeai
