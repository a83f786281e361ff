#include <httplib.h>

#include <chrono>
#include <cstdlib>

#include "edgeai/genai.hpp"

namespace edgeai {

using nlohmann::json;

namespace {

struct SplitUrl {
  std::string base;
  std::string path;
};

SplitUrl split_url(const std::string& url)
{
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(Errc::ConfigError, "endpoint_url", "endpoint URL needs a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    return {url, "/"};
  }
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpLlmClient::HttpLlmClient(GenAiConfig config, std::string model)
    : config_(std::move(config)), model_(std::move(model))
{
}

LlmReply HttpLlmClient::complete(const json& payload)
{
  httplib::Headers headers;
  if (!config_.api_key_env_var.empty()) {
    const char* key = std::getenv(config_.api_key_env_var.c_str());
    if (key == nullptr || *key == '\0') {
      throw Error(Errc::MissingApiKey, config_.api_key_env_var,
                  "environment variable " + config_.api_key_env_var + " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  const SplitUrl url = split_url(config_.endpoint_url);
  httplib::Client client(url.base);
  const auto timeout = std::chrono::milliseconds(config_.request_timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  json body{{"model", model_},
            {"messages", json::array({{{"role", "user"}, {"content", payload.value("prompt", "")}}})}};
  if (payload.contains("metadata")) {
    body["metadata"] = payload["metadata"];
  }

  const auto start = std::chrono::steady_clock::now();
  auto result = client.Post(url.path, headers, body.dump(), "application/json");
  if (!result) {
    const auto elapsed = std::chrono::steady_clock::now() - start;
    if (result.error() == httplib::Error::ConnectionTimeout ||
        (result.error() == httplib::Error::Read && elapsed >= timeout * 9 / 10)) {
      throw Error(Errc::Timeout, config_.endpoint_url,
                  "no response within " + std::to_string(config_.request_timeout_ms) + " ms");
    }
    throw Error(Errc::HttpError, config_.endpoint_url,
                "request failed: " + httplib::to_string(result.error()));
  }
  if (result->status < 200 || result->status >= 300) {
    throw Error(Errc::HttpError, std::to_string(result->status),
                "endpoint returned HTTP " + std::to_string(result->status));
  }
  json reply;
  try {
    reply = json::parse(result->body);
  } catch (const json::parse_error&) {
    throw Error(Errc::MalformedResponse, config_.endpoint_url, "response is not JSON");
  }
  try {
    std::string text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    if (text.empty()) {
      throw Error(Errc::MalformedResponse, config_.endpoint_url, "response content is empty");
    }
    return LlmReply{std::move(text), reply.value("model", model_)};
  } catch (const json::exception&) {
    throw Error(Errc::MalformedResponse, config_.endpoint_url,
                "response has no choices[0].message.content");
  }
}

}  // namespace edgeai
