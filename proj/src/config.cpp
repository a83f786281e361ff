#include "edgeai/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include "edgeai/errors.hpp"

namespace edgeai {

using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& field, const std::string& why)
{
  throw Error(Errc::ValidationError, field, field + ": " + why);
}

const json* find_key(const json& doc, const char* key)
{
  auto it = doc.find(key);
  return it == doc.end() ? nullptr : &*it;
}

std::string get_string(const json& doc, const char* key, const std::string& field,
                       std::optional<std::string> fallback)
{
  const json* value = find_key(doc, key);
  if (value == nullptr) {
    if (!fallback) {
      invalid(field, "required");
    }
    return *fallback;
  }
  if (!value->is_string()) {
    invalid(field, "expected string");
  }
  return value->get<std::string>();
}

double get_number(const json& doc, const char* key, const std::string& field,
                  std::optional<double> fallback)
{
  const json* value = find_key(doc, key);
  if (value == nullptr) {
    if (!fallback) {
      invalid(field, "required");
    }
    return *fallback;
  }
  if (!value->is_number()) {
    invalid(field, "expected number");
  }
  return value->get<double>();
}

std::int64_t get_integer(const json& doc, const char* key, const std::string& field,
                         std::optional<std::int64_t> fallback)
{
  const json* value = find_key(doc, key);
  if (value == nullptr) {
    if (!fallback) {
      invalid(field, "required");
    }
    return *fallback;
  }
  if (!value->is_number_integer()) {
    invalid(field, "expected integer");
  }
  return value->get<std::int64_t>();
}

bool get_bool(const json& doc, const char* key, const std::string& field, bool fallback)
{
  const json* value = find_key(doc, key);
  if (value == nullptr) {
    return fallback;
  }
  if (!value->is_boolean()) {
    invalid(field, "expected boolean");
  }
  return value->get<bool>();
}

void require_object(const json& doc, const std::string& field)
{
  if (!doc.is_object()) {
    invalid(field, "expected object");
  }
}

void reject_unknown_keys(const json& doc, std::initializer_list<std::string_view> known,
                         const std::string& prefix)
{
  for (const auto& item : doc.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
      const std::string field = prefix.empty() ? item.key() : prefix + "." + item.key();
      throw Error(Errc::UnknownField, field, "unknown field '" + field + "'");
    }
  }
}

bool is_valid_topic_name(std::string_view name)
{
  return !name.empty() && name.find_first_of("+#") == std::string_view::npos &&
         name.front() != '/' && name.back() != '/';
}

// Byte offset to 1-based line and column.
std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t offset)
{
  std::size_t line = 1;
  std::size_t column = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

}  // namespace

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) const
{
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].name == name) {
      return i;
    }
  }
  return std::nullopt;
}

std::vector<std::string> FeatureSchema::names() const
{
  std::vector<std::string> out;
  out.reserve(features.size());
  for (const auto& feature : features) {
    out.push_back(feature.name);
  }
  return out;
}

bool deviation_exceeds(double predicted, double expected, const DeviationPolicy& policy) noexcept
{
  const double error = std::abs(predicted - expected);
  if (policy.mode == DeviationMode::Percentage &&
      std::abs(expected) >= kPercentageDenominatorFloor) {
    return error / std::abs(expected) > policy.threshold;
  }
  return error > policy.threshold;
}

bool is_identifier(std::string_view name) noexcept
{
  if (name.empty()) {
    return false;
  }
  const auto head_ok = [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_';
  };
  if (!head_ok(name.front())) {
    return false;
  }
  return std::all_of(name.begin() + 1, name.end(),
                     [&](char c) { return head_ok(c) || (c >= '0' && c <= '9'); });
}

bool is_valid_hostname(std::string_view host) noexcept
{
  if (host.empty() || host.size() > 253) {
    return false;
  }
  if (host.front() == '.' || host.back() == '.' || host.front() == '-') {
    return false;
  }
  return std::all_of(host.begin(), host.end(), [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
           c == '.' || c == '-' || c == '_';
  });
}

HostPort parse_host_port(std::string_view text)
{
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == text.size()) {
    throw Error(Errc::ConfigError, std::string(text), "expected host:port, got '" + std::string(text) + "'");
  }
  HostPort out;
  out.host = std::string(text.substr(0, colon));
  const std::string port_text(text.substr(colon + 1));
  if (!std::all_of(port_text.begin(), port_text.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
      port_text.size() > 5) {
    throw Error(Errc::ConfigError, std::string(text), "bad port in '" + std::string(text) + "'");
  }
  out.port = std::stoi(port_text);
  if (!is_valid_hostname(out.host) || out.port < 0 || out.port > 65535) {
    throw Error(Errc::ConfigError, std::string(text), "bad host:port '" + std::string(text) + "'");
  }
  return out;
}

void validate_schema(const FeatureSchema& schema)
{
  if (schema.features.empty()) {
    invalid("features", "at least one feature is required");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < schema.features.size(); ++i) {
    const auto& feature = schema.features[i];
    const std::string field = "features[" + std::to_string(i) + "]";
    if (!is_identifier(feature.name)) {
      invalid(field + ".name", "'" + feature.name + "' is not a valid identifier");
    }
    if (!seen.insert(feature.name).second) {
      invalid(field + ".name", "duplicate feature '" + feature.name + "'");
    }
    if (feature.min && !std::isfinite(*feature.min)) {
      invalid(field + ".min", "must be finite");
    }
    if (feature.max && !std::isfinite(*feature.max)) {
      invalid(field + ".max", "must be finite");
    }
    if (feature.min && feature.max && !(*feature.min < *feature.max)) {
      invalid(field + ".min", "min must be < max");
    }
  }
  if (!is_identifier(schema.target_name)) {
    invalid("target_name", "'" + schema.target_name + "' is not a valid identifier");
  }
  if (seen.contains(schema.target_name)) {
    invalid("target_name", "target must not be a feature");
  }
}

void validate_config(const DeploymentConfig& config)
{
  if (config.broker_host.empty()) {
    invalid("broker_host", "required");
  }
  if (!is_valid_hostname(config.broker_host)) {
    invalid("broker_host", "malformed host '" + config.broker_host + "'");
  }
  if (config.broker_port < 1 || config.broker_port > 65535) {
    invalid("broker_port", "must be in [1, 65535]");
  }
  if (config.client_id.empty()) {
    invalid("client_id", "must not be empty");
  }
  if (!config.topic_prefix.empty() && !is_valid_topic_name(config.topic_prefix)) {
    invalid("topic_prefix", "malformed prefix");
  }
  for (const auto& [field, name] : {std::pair{"input_topic", &config.input_topic},
                                    std::pair{"output_topic", &config.output_topic},
                                    std::pair{"command_topic", &config.command_topic}}) {
    if (!is_valid_topic_name(*name) || name->find('/') != std::string::npos) {
      invalid(field, "malformed topic name '" + *name + "'");
    }
  }
  const auto topics = derive_topics(config);
  if (topics.input == topics.output || topics.input == topics.command ||
      topics.output == topics.command) {
    invalid("input_topic", "input, output and command topics must be pairwise distinct");
  }
  validate_schema(config.feature_schema);
  if (!std::isfinite(config.deviation_policy.threshold) || config.deviation_policy.threshold <= 0.0) {
    invalid("deviation_policy.threshold", "must be > 0");
  }
  if (config.deviation_policy.mode == DeviationMode::Percentage &&
      config.deviation_policy.threshold > 1.0) {
    invalid("deviation_policy.threshold", "percentage threshold is a fraction in (0, 1]");
  }
  if (!std::isfinite(config.replay_rate_hz) || config.replay_rate_hz <= 0.0) {
    invalid("replay_rate_hz", "must be > 0");
  }
  if (config.genai.request_timeout_ms <= 0) {
    invalid("genai.request_timeout_ms", "must be > 0");
  }
  if (config.genai.few_shot_k < 0) {
    invalid("genai.few_shot_k", "must be >= 0");
  }
  if (config.genai.batch_size < 1) {
    invalid("genai.batch_size", "must be >= 1");
  }
  if (config.genai.endpoint_url.empty()) {
    invalid("genai.endpoint_url", "must not be empty");
  }
  try {
    (void)parse_host_port(config.gateway_bind);
  } catch (const Error&) {
    invalid("gateway_bind", "expected host:port");
  }
}

json schema_to_json(const FeatureSchema& schema)
{
  json features = json::array();
  for (const auto& feature : schema.features) {
    json entry = {{"name", feature.name}, {"unit", feature.unit}, {"required", feature.required}};
    if (feature.min) {
      entry["min"] = *feature.min;
    }
    if (feature.max) {
      entry["max"] = *feature.max;
    }
    features.push_back(std::move(entry));
  }
  return {{"features", std::move(features)}, {"target_name", schema.target_name}};
}

FeatureSchema schema_from_json(const json& doc)
{
  require_object(doc, "schema");
  FeatureSchema schema;
  const json* features = find_key(doc, "features");
  if (features == nullptr) {
    invalid("features", "required");
  }
  if (!features->is_array()) {
    invalid("features", "expected array");
  }
  for (std::size_t i = 0; i < features->size(); ++i) {
    const json& entry = (*features)[i];
    const std::string field = "features[" + std::to_string(i) + "]";
    require_object(entry, field);
    reject_unknown_keys(entry, {"name", "unit", "required", "min", "max"}, field);
    FeatureSpec spec;
    spec.name = get_string(entry, "name", field + ".name", std::nullopt);
    spec.unit = get_string(entry, "unit", field + ".unit", std::string{});
    spec.required = get_bool(entry, "required", field + ".required", true);
    if (find_key(entry, "min") != nullptr) {
      spec.min = get_number(entry, "min", field + ".min", std::nullopt);
    }
    if (find_key(entry, "max") != nullptr) {
      spec.max = get_number(entry, "max", field + ".max", std::nullopt);
    }
    schema.features.push_back(std::move(spec));
  }
  schema.target_name = get_string(doc, "target_name", "target_name", std::string("target"));
  return schema;
}

json policy_to_json(const DeviationPolicy& policy)
{
  return {{"mode", policy.mode == DeviationMode::Absolute ? "absolute" : "percentage"},
          {"threshold", policy.threshold}};
}

DeviationPolicy policy_from_json(const json& doc)
{
  require_object(doc, "deviation_policy");
  reject_unknown_keys(doc, {"mode", "threshold"}, "deviation_policy");
  DeviationPolicy policy;
  const std::string mode =
      get_string(doc, "mode", "deviation_policy.mode", std::string("absolute"));
  if (mode == "absolute") {
    policy.mode = DeviationMode::Absolute;
  } else if (mode == "percentage") {
    policy.mode = DeviationMode::Percentage;
  } else {
    invalid("deviation_policy.mode", "expected \"absolute\" or \"percentage\"");
  }
  policy.threshold = get_number(doc, "threshold", "deviation_policy.threshold", std::nullopt);
  return policy;
}

DeploymentConfig config_from_json(const json& doc)
{
  require_object(doc, "config");
  reject_unknown_keys(doc,
                      {"broker_host", "broker_port", "client_id", "topic_prefix", "input_topic",
                       "output_topic", "command_topic", "gateway_bind", "replay_rate_hz",
                       "deviation_policy", "features", "target_name", "genai"},
                      "");
  DeploymentConfig config;
  config.broker_host = get_string(doc, "broker_host", "broker_host", std::nullopt);
  config.broker_port = static_cast<int>(
      std::clamp<std::int64_t>(get_integer(doc, "broker_port", "broker_port", 1883), -1, 70000));
  config.client_id = get_string(doc, "client_id", "client_id", config.client_id);
  config.topic_prefix = get_string(doc, "topic_prefix", "topic_prefix", std::string{});
  config.input_topic = get_string(doc, "input_topic", "input_topic", config.input_topic);
  config.output_topic = get_string(doc, "output_topic", "output_topic", config.output_topic);
  config.command_topic = get_string(doc, "command_topic", "command_topic", config.command_topic);
  config.gateway_bind = get_string(doc, "gateway_bind", "gateway_bind", config.gateway_bind);
  config.replay_rate_hz = get_number(doc, "replay_rate_hz", "replay_rate_hz", config.replay_rate_hz);
  if (const json* policy = find_key(doc, "deviation_policy")) {
    config.deviation_policy = policy_from_json(*policy);
  }
  config.feature_schema = schema_from_json(doc);
  if (const json* genai = find_key(doc, "genai")) {
    require_object(*genai, "genai");
    reject_unknown_keys(*genai,
                        {"endpoint_url", "api_key_env_var", "template_dir", "request_timeout_ms",
                         "few_shot_k", "batch_size"},
                        "genai");
    GenAiConfig& g = config.genai;
    g.endpoint_url = get_string(*genai, "endpoint_url", "genai.endpoint_url", g.endpoint_url);
    g.api_key_env_var =
        get_string(*genai, "api_key_env_var", "genai.api_key_env_var", g.api_key_env_var);
    g.template_dir = get_string(*genai, "template_dir", "genai.template_dir", g.template_dir);
    const auto clamp_int = [](std::int64_t v) {
      return static_cast<int>(std::clamp<std::int64_t>(v, -1, 1'000'000'000));
    };
    g.request_timeout_ms = clamp_int(
        get_integer(*genai, "request_timeout_ms", "genai.request_timeout_ms", g.request_timeout_ms));
    g.few_shot_k = clamp_int(get_integer(*genai, "few_shot_k", "genai.few_shot_k", g.few_shot_k));
    g.batch_size = clamp_int(get_integer(*genai, "batch_size", "genai.batch_size", g.batch_size));
  }
  validate_config(config);
  return config;
}

json config_to_json(const DeploymentConfig& config)
{
  json doc = schema_to_json(config.feature_schema);
  doc["broker_host"] = config.broker_host;
  doc["broker_port"] = config.broker_port;
  doc["client_id"] = config.client_id;
  doc["topic_prefix"] = config.topic_prefix;
  doc["input_topic"] = config.input_topic;
  doc["output_topic"] = config.output_topic;
  doc["command_topic"] = config.command_topic;
  doc["gateway_bind"] = config.gateway_bind;
  doc["replay_rate_hz"] = config.replay_rate_hz;
  doc["deviation_policy"] = policy_to_json(config.deviation_policy);
  doc["genai"] = {
      {"endpoint_url", config.genai.endpoint_url},
      {"api_key_env_var", config.genai.api_key_env_var},
      {"template_dir", config.genai.template_dir},
      {"request_timeout_ms", config.genai.request_timeout_ms},
      {"few_shot_k", config.genai.few_shot_k},
      {"batch_size", config.genai.batch_size},
  };
  return doc;
}

std::string serialize_config(const DeploymentConfig& config)
{
  return config_to_json(config).dump(2);
}

DeploymentConfig parse_config(std::string_view text)
{
  json doc;
  try {
    doc = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    const auto [line, column] = line_column(text, e.byte == 0 ? 0 : e.byte - 1);
    throw Error(Errc::ParseError, "line " + std::to_string(line),
                "malformed config at line " + std::to_string(line) + ", column " +
                    std::to_string(column) + " (offset " + std::to_string(e.byte) + "): " + e.what());
  }
  return config_from_json(doc);
}

DeploymentConfig load_config(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(Errc::FileNotFound, path.string(), "cannot read config '" + path.string() + "'");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string qualify_topic(std::string_view prefix, std::string_view name)
{
  if (prefix.empty()) {
    return std::string(name);
  }
  std::string out(prefix);
  out += '/';
  out += name;
  return out;
}

TopicSet derive_topics(const DeploymentConfig& config)
{
  TopicSet topics;
  topics.input = qualify_topic(config.topic_prefix, config.input_topic);
  topics.output = qualify_topic(config.topic_prefix, config.output_topic);
  topics.command = qualify_topic(config.topic_prefix, config.command_topic);
  topics.explanation = topics.output + "/explanation";
  return topics;
}

std::string schema_hash(const FeatureSchema& schema)
{
  // FNV-1a over a canonical rendering of names, units and the target.
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  const auto mix = [&hash](std::string_view text) {
    for (unsigned char c : text) {
      hash ^= c;
      hash *= 0x100000001b3ULL;
    }
    hash ^= 0xff;
    hash *= 0x100000001b3ULL;
  };
  for (const auto& feature : schema.features) {
    mix(feature.name);
    mix(feature.unit);
  }
  mix("->");
  mix(schema.target_name);
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(hash));
  return out;
}

Observation validate_observation_against_schema(const json& payload, const FeatureSchema& schema)
{
  if (!payload.is_object()) {
    throw Error(Errc::TypeMismatch, "", "observation payload must be an object");
  }
  Observation observation;
  observation.values.resize(schema.size());
  for (const auto& [key, value] : payload.items()) {
    const bool is_target = key == schema.target_name;
    const auto index = schema.index_of(key);
    if (!is_target && !index) {
      throw Error(Errc::UnknownField, key, "unknown field '" + key + "'");
    }
    if (!value.is_number()) {
      throw Error(Errc::TypeMismatch, key, "field '" + key + "' must be a number");
    }
    const double number = value.get<double>();
    if (!std::isfinite(number)) {
      throw Error(Errc::TypeMismatch, key, "field '" + key + "' must be finite");
    }
    if (is_target) {
      observation.target = number;
      continue;
    }
    const auto& spec = schema.features[*index];
    if ((spec.min && number < *spec.min) || (spec.max && number > *spec.max)) {
      std::ostringstream why;
      why << "field '" << key << "' value " << number << " outside ["
          << (spec.min ? std::to_string(*spec.min) : "-inf") << ", "
          << (spec.max ? std::to_string(*spec.max) : "inf") << "]";
      throw Error(Errc::OutOfBounds, key, why.str());
    }
    observation.values[*index] = number;
  }
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (schema.features[i].required && !observation.values[i]) {
      throw Error(Errc::MissingRequiredField, schema.features[i].name,
                  "missing required field '" + schema.features[i].name + "'");
    }
  }
  return observation;
}

std::vector<double> model_input(const Observation& observation, const FeatureSchema& schema)
{
  std::vector<double> out(schema.size(), 0.0);
  for (std::size_t i = 0; i < schema.size() && i < observation.values.size(); ++i) {
    if (observation.values[i]) {
      out[i] = *observation.values[i];
    } else {
      const auto& spec = schema.features[i];
      out[i] = (spec.min && spec.max) ? 0.5 * (*spec.min + *spec.max) : 0.0;
    }
  }
  return out;
}

}  // namespace edgeai
