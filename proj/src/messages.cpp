#include "edgeai/messages.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <random>

#include "edgeai/errors.hpp"

namespace edgeai {

using nlohmann::json;

std::int64_t monotonic_us() noexcept
{
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::int64_t wall_clock_ms() noexcept
{
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

namespace {

json parse_document(std::string_view payload, Errc on_error)
{
  try {
    return json::parse(payload);
  } catch (const json::parse_error& e) {
    throw Error(on_error, "payload", std::string("payload is not JSON: ") + e.what());
  }
}

std::optional<std::int64_t> optional_int(const json& doc, const char* key)
{
  auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) {
    return std::nullopt;
  }
  if (!it->is_number_integer()) {
    throw Error(Errc::TypeMismatch, key, std::string(key) + " must be an integer");
  }
  return it->get<std::int64_t>();
}

const json& require(const json& doc, const char* key)
{
  auto it = doc.find(key);
  if (it == doc.end()) {
    throw Error(Errc::SchemaError, key, std::string("missing '") + key + "'");
  }
  return *it;
}

double require_number(const json& doc, const char* key)
{
  const json& value = require(doc, key);
  if (!value.is_number()) {
    throw Error(Errc::SchemaError, key, std::string("'") + key + "' must be a number");
  }
  return value.get<double>();
}

}  // namespace

json observation_to_json(const Observation& observation, const FeatureSchema& schema)
{
  json features = json::object();
  for (std::size_t i = 0; i < schema.size() && i < observation.values.size(); ++i) {
    if (observation.values[i]) {
      features[schema.features[i].name] = *observation.values[i];
    }
  }
  json doc = {{"ts", observation.ts_ms}, {"features", std::move(features)}};
  if (observation.target) {
    doc["target"] = *observation.target;
  }
  return doc;
}

Observation observation_from_json(const json& doc, const FeatureSchema& schema)
{
  if (!doc.is_object()) {
    throw Error(Errc::TypeMismatch, "observation", "observation must be an object");
  }
  auto features = doc.find("features");
  if (features == doc.end() || !features->is_object()) {
    throw Error(Errc::TypeMismatch, "features", "observation.features must be an object");
  }
  json flat = *features;
  if (auto target = doc.find("target"); target != doc.end() && !target->is_null()) {
    flat[schema.target_name] = *target;
  }
  Observation observation = validate_observation_against_schema(flat, schema);
  observation.ts_ms = optional_int(doc, "ts").value_or(0);
  return observation;
}

std::string encode_input(const InputMessage& message, const FeatureSchema& schema)
{
  json doc = observation_to_json(message.observation, schema);
  if (message.row_id) {
    doc["row_id"] = *message.row_id;
  }
  if (message.ingest_us) {
    doc["ingest_us"] = *message.ingest_us;
  }
  return doc.dump();
}

InputMessage decode_input(std::string_view payload, const FeatureSchema& schema)
{
  const json doc = parse_document(payload, Errc::ParseError);
  InputMessage message;
  message.observation = observation_from_json(doc, schema);
  message.row_id = optional_int(doc, "row_id");
  message.ingest_us = optional_int(doc, "ingest_us");
  return message;
}

json result_to_json(const ResultMessage& message, const FeatureSchema& schema)
{
  json doc = {
      {"row_id", message.row_id},
      {"observation", observation_to_json(message.observation, schema)},
      {"prediction",
       {{"predicted", message.prediction.predicted},
        {"confidence", message.prediction.confidence},
        {"model_version", message.prediction.model_version},
        {"inference_latency_us", message.prediction.inference_latency_us}}},
      {"status", to_string(message.status)},
  };
  if (message.ingest_us) {
    doc["ingest_us"] = *message.ingest_us;
  }
  if (message.publish_us) {
    doc["publish_us"] = *message.publish_us;
  }
  return doc;
}

std::string encode_result(const ResultMessage& message, const FeatureSchema& schema)
{
  return result_to_json(message, schema).dump();
}

ResultMessage decode_result(std::string_view payload, const FeatureSchema& schema)
{
  const json doc = parse_document(payload, Errc::SchemaError);
  try {
    if (!doc.is_object()) {
      throw Error(Errc::SchemaError, "result", "result must be an object");
    }
    ResultMessage message;
    const json& row_id = require(doc, "row_id");
    if (!row_id.is_number_integer()) {
      throw Error(Errc::SchemaError, "row_id", "row_id must be an integer");
    }
    message.row_id = row_id.get<std::int64_t>();
    message.observation = observation_from_json(require(doc, "observation"), schema);
    const json& prediction = require(doc, "prediction");
    if (!prediction.is_object()) {
      throw Error(Errc::SchemaError, "prediction", "prediction must be an object");
    }
    message.prediction.row_id = message.row_id;
    message.prediction.predicted = require_number(prediction, "predicted");
    message.prediction.confidence = require_number(prediction, "confidence");
    message.prediction.model_version = optional_int(prediction, "model_version").value_or(0);
    message.prediction.inference_latency_us =
        optional_int(prediction, "inference_latency_us").value_or(0);
    const json& status = require(doc, "status");
    if (status == "OK") {
      message.status = StatusFlag::OK;
    } else if (status == "NonOK") {
      message.status = StatusFlag::NonOK;
    } else {
      throw Error(Errc::SchemaError, "status", "status must be \"OK\" or \"NonOK\"");
    }
    message.ingest_us = optional_int(doc, "ingest_us");
    message.publish_us = optional_int(doc, "publish_us");
    return message;
  } catch (const Error& e) {
    if (e.code() == Errc::SchemaError) {
      throw;
    }
    throw Error(Errc::SchemaError, e.subject(), e.what());
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaError, "result", e.what());
  }
}

std::string encode_explanation(const ExplanationMessage& message)
{
  return json{{"row_id", message.row_id},
              {"text", message.text},
              {"model_name", message.model_name},
              {"flags_recalibration", message.flags_recalibration}}
      .dump();
}

ExplanationMessage decode_explanation(std::string_view payload)
{
  const json doc = parse_document(payload, Errc::SchemaError);
  try {
    ExplanationMessage message;
    message.row_id = require(doc, "row_id").get<std::int64_t>();
    message.text = require(doc, "text").get<std::string>();
    message.model_name = doc.value("model_name", std::string{});
    message.flags_recalibration = doc.value("flags_recalibration", false);
    return message;
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaError, "explanation", e.what());
  }
}

namespace {

struct CommandEncoder {
  json operator()(const RecalibrateCommand& c) const
  {
    json corrections = json::array();
    for (const auto& correction : c.corrections) {
      corrections.push_back({{"features", correction.features}, {"target", correction.target}});
    }
    return {{"cmd", "recalibrate"}, {"request_id", c.request_id}, {"corrections", corrections}};
  }
  json operator()(const SwapCommand& c) const
  {
    return {{"cmd", "swap"}, {"request_id", c.request_id}, {"artifact", c.artifact}};
  }
  json operator()(const RollbackCommand& c) const
  {
    return {{"cmd", "rollback"}, {"request_id", c.request_id}, {"version", c.version}};
  }
  json operator()(const CommandAck& c) const
  {
    json doc = {{"cmd", "ack"},
                {"request_id", c.request_id},
                {"ok", c.ok},
                {"model_version", c.model_version}};
    if (!c.error.empty()) {
      doc["error"] = c.error;
    }
    return doc;
  }
};

}  // namespace

std::string encode_command(const Command& command)
{
  return std::visit(CommandEncoder{}, command).dump();
}

Command decode_command(std::string_view payload)
{
  const json doc = parse_document(payload, Errc::SchemaError);
  try {
    const std::string cmd = require(doc, "cmd").get<std::string>();
    const std::string request_id = doc.value("request_id", std::string{});
    if (cmd == "recalibrate") {
      RecalibrateCommand out{request_id, {}};
      const json& corrections = require(doc, "corrections");
      if (!corrections.is_array()) {
        throw Error(Errc::SchemaError, "corrections", "corrections must be an array");
      }
      for (const auto& entry : corrections) {
        const json& features = require(entry, "features");
        if (!features.is_object()) {
          throw Error(Errc::SchemaError, "features", "correction features must be an object");
        }
        out.corrections.push_back({features, require_number(entry, "target")});
      }
      return out;
    }
    if (cmd == "swap") {
      return SwapCommand{request_id, require(doc, "artifact")};
    }
    if (cmd == "rollback") {
      return RollbackCommand{request_id, require(doc, "version").get<std::int64_t>()};
    }
    if (cmd == "ack") {
      return CommandAck{request_id, doc.value("ok", false),
                        doc.value("model_version", std::int64_t{0}),
                        doc.value("error", std::string{})};
    }
    throw Error(Errc::SchemaError, "cmd", "unknown command '" + cmd + "'");
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaError, "command", e.what());
  }
}

std::string make_request_id()
{
  static std::atomic<std::uint64_t> counter{0};
  static const std::uint64_t salt = std::random_device{}();
  char out[40];
  std::snprintf(out, sizeof out, "%08llx-%llu", static_cast<unsigned long long>(salt & 0xffffffffULL),
                static_cast<unsigned long long>(++counter));
  return out;
}

std::int64_t next_row_id() noexcept
{
  // Seeded from the wall clock in microseconds so ids from sources started at
  // different times do not collide and keep increasing across restarts.
  static std::atomic<std::int64_t> counter{wall_clock_ms() * 1000};
  return ++counter;
}

}  // namespace edgeai
