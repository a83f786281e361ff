#pragma once

// JSON payloads exchanged over the bus. Field names are part of the wire
// contract shared with the operator console and other deployments.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "edgeai/config.hpp"
#include "edgeai/prediction.hpp"

namespace edgeai {

// Monotonic microseconds; comparable across processes on one host.
[[nodiscard]] std::int64_t monotonic_us() noexcept;
[[nodiscard]] std::int64_t wall_clock_ms() noexcept;

// Input-topic message: {"row_id"?, "ingest_us"?, "ts", "features":{...}, "target"?}
struct InputMessage {
  std::optional<std::int64_t> row_id;
  std::optional<std::int64_t> ingest_us;
  Observation observation;
};

[[nodiscard]] nlohmann::json observation_to_json(const Observation& observation,
                                                 const FeatureSchema& schema);
[[nodiscard]] Observation observation_from_json(const nlohmann::json& doc,
                                                const FeatureSchema& schema);

[[nodiscard]] std::string encode_input(const InputMessage& message, const FeatureSchema& schema);
// Throws Error (ParseError or a schema-validation code) on bad input.
[[nodiscard]] InputMessage decode_input(std::string_view payload, const FeatureSchema& schema);

// Output-topic message.
struct ResultMessage {
  std::int64_t row_id = 0;
  Observation observation;
  Prediction prediction;
  StatusFlag status = StatusFlag::OK;
  std::optional<std::int64_t> ingest_us;
  std::optional<std::int64_t> publish_us;
};

[[nodiscard]] nlohmann::json result_to_json(const ResultMessage& message,
                                            const FeatureSchema& schema);
[[nodiscard]] std::string encode_result(const ResultMessage& message, const FeatureSchema& schema);
// Throws Error(SchemaError) when the document does not match the result schema.
[[nodiscard]] ResultMessage decode_result(std::string_view payload, const FeatureSchema& schema);

struct ExplanationMessage {
  std::int64_t row_id = 0;
  std::string text;
  std::string model_name;
  bool flags_recalibration = false;

  bool operator==(const ExplanationMessage&) const = default;
};

[[nodiscard]] std::string encode_explanation(const ExplanationMessage& message);
[[nodiscard]] ExplanationMessage decode_explanation(std::string_view payload);

struct Correction {
  nlohmann::json features;  // {name: value}
  double target = 0.0;
};

struct RecalibrateCommand {
  std::string request_id;
  std::vector<Correction> corrections;
};

struct SwapCommand {
  std::string request_id;
  nlohmann::json artifact;
};

struct RollbackCommand {
  std::string request_id;
  std::int64_t version = 0;
};

struct CommandAck {
  std::string request_id;
  bool ok = false;
  std::int64_t model_version = 0;
  std::string error;
};

using Command = std::variant<RecalibrateCommand, SwapCommand, RollbackCommand, CommandAck>;

[[nodiscard]] std::string encode_command(const Command& command);
// Throws Error(SchemaError) on unknown or malformed commands.
[[nodiscard]] Command decode_command(std::string_view payload);

[[nodiscard]] std::string make_request_id();

// Unique, increasing row identifiers for rows entering the pipeline.
[[nodiscard]] std::int64_t next_row_id() noexcept;

}  // namespace edgeai
