#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace edgeai {

struct FeatureSpec {
  std::string name;
  std::string unit;
  bool required = true;
  std::optional<double> min;
  std::optional<double> max;

  bool operator==(const FeatureSpec&) const = default;
};

struct FeatureSchema {
  std::vector<FeatureSpec> features;
  std::string target_name = "target";

  [[nodiscard]] std::size_t size() const noexcept { return features.size(); }
  [[nodiscard]] std::optional<std::size_t> index_of(std::string_view name) const;
  [[nodiscard]] std::vector<std::string> names() const;

  bool operator==(const FeatureSchema&) const = default;
};

enum class DeviationMode { Absolute, Percentage };

struct DeviationPolicy {
  DeviationMode mode = DeviationMode::Absolute;
  double threshold = 1.0;

  bool operator==(const DeviationPolicy&) const = default;
};

// Below this magnitude a percentage policy falls back to absolute deviation.
inline constexpr double kPercentageDenominatorFloor = 1e-9;

// The single deviation rule shared by OK/Non-OK classification and the
// GenAI trigger.
[[nodiscard]] bool deviation_exceeds(double predicted, double expected,
                                     const DeviationPolicy& policy) noexcept;

struct GenAiConfig {
  std::string endpoint_url = "https://api.openai.com/v1/chat/completions";
  std::string api_key_env_var = "OPENAI_API_KEY";
  std::string template_dir = "templates";
  int request_timeout_ms = 5000;
  int few_shot_k = 0;
  int batch_size = 1;

  bool operator==(const GenAiConfig&) const = default;
};

struct DeploymentConfig {
  std::string broker_host;
  int broker_port = 1883;
  std::string client_id = "edgeai";
  std::string topic_prefix;
  std::string input_topic = "inputTopic";
  std::string output_topic = "outputTopic";
  std::string command_topic = "commandTopic";
  FeatureSchema feature_schema;
  DeviationPolicy deviation_policy;
  double replay_rate_hz = 1.0;
  GenAiConfig genai;
  std::string gateway_bind = "127.0.0.1:8080";

  bool operator==(const DeploymentConfig&) const = default;
};

struct TopicSet {
  std::string input;
  std::string output;
  std::string command;
  // Explanations travel beside results, one level below the output topic.
  std::string explanation;
};

struct HostPort {
  std::string host;
  int port = 0;
};

// One validated sensor reading. Values follow schema order; an absent
// optional feature is nullopt.
struct Observation {
  std::int64_t ts_ms = 0;
  std::vector<std::optional<double>> values;
  std::optional<double> target;

  bool operator==(const Observation&) const = default;
};

[[nodiscard]] DeploymentConfig load_config(const std::filesystem::path& path);
[[nodiscard]] DeploymentConfig parse_config(std::string_view text);
[[nodiscard]] DeploymentConfig config_from_json(const nlohmann::json& doc);
[[nodiscard]] nlohmann::json config_to_json(const DeploymentConfig& config);
[[nodiscard]] std::string serialize_config(const DeploymentConfig& config);

// Throws Error(ValidationError) naming the first offending field.
void validate_config(const DeploymentConfig& config);
void validate_schema(const FeatureSchema& schema);

[[nodiscard]] nlohmann::json schema_to_json(const FeatureSchema& schema);
[[nodiscard]] FeatureSchema schema_from_json(const nlohmann::json& doc);
[[nodiscard]] nlohmann::json policy_to_json(const DeviationPolicy& policy);
[[nodiscard]] DeviationPolicy policy_from_json(const nlohmann::json& doc);

[[nodiscard]] std::string schema_hash(const FeatureSchema& schema);

[[nodiscard]] std::string qualify_topic(std::string_view prefix, std::string_view name);
[[nodiscard]] TopicSet derive_topics(const DeploymentConfig& config);

[[nodiscard]] HostPort parse_host_port(std::string_view text);
[[nodiscard]] bool is_valid_hostname(std::string_view host) noexcept;
[[nodiscard]] bool is_identifier(std::string_view name) noexcept;

// Strict validation: rejects unknown keys, non-numeric or non-finite values,
// out-of-bounds values, and missing required features. The key equal to
// schema.target_name, when present, becomes the observation target.
[[nodiscard]] Observation validate_observation_against_schema(
    const nlohmann::json& payload, const FeatureSchema& schema);

// Feature vector for a model: optional features that are absent are imputed
// with the midpoint of their bounds, or 0 when unbounded.
[[nodiscard]] std::vector<double> model_input(const Observation& observation,
                                              const FeatureSchema& schema);

}  // namespace edgeai
