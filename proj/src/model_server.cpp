#include <httplib.h>

#include "edgeai/errors.hpp"
#include "edgeai/inference.hpp"
#include "edgeai/logging.hpp"
#include "http_bind.hpp"

namespace edgeai {

using nlohmann::json;

namespace {

void reply(httplib::Response& res, int status, const json& body)
{
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json error_body(const Error& e)
{
  return json{{"error", to_string(e.code())}, {"message", e.what()}};
}

}  // namespace

ModelServer::ModelServer(const HostPort& bind, FeatureSchema schema, Source source,
                         DeployHandler deploy)
    : schema_(std::move(schema)),
      source_(std::move(source)),
      deploy_(std::move(deploy)),
      server_(std::make_unique<httplib::Server>())
{
  server_->Post("/predict", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::parse_error& e) {
        throw Error(Errc::ParseError, "body", e.what());
      }
      if (!body.is_object() || !body.contains("features") || !body["features"].is_object()) {
        throw Error(Errc::DimensionMismatch, "features", "body must carry a features object");
      }
      const Observation observation = validate_observation_against_schema(body["features"], schema_);
      const ServedModel served = source_();
      const Prediction prediction = predict(*served.model, model_input(observation, schema_));
      reply(res, 200,
            {{"predicted", prediction.predicted},
             {"confidence", served.confidence},
             {"model_version", prediction.model_version}});
    } catch (const Error& e) {
      reply(res, 400, error_body(e));
    }
  });

  server_->Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"status", "ok"}, {"model_version", source_().model->version}});
  });

  server_->Post("/deploy", [this](const httplib::Request& req, httplib::Response& res) {
    json artifact;
    try {
      artifact = json::parse(req.body);
    } catch (const json::parse_error& e) {
      reply(res, 400, {{"error", "CorruptArtifact"}, {"message", e.what()}});
      return;
    }
    const CommandAck ack = deploy_(artifact);
    json body{{"ok", ack.ok}, {"model_version", ack.model_version}};
    if (!ack.ok) {
      body["error"] = ack.error;
    }
    reply(res, ack.ok ? 200 : (ack.error == "SchemaHashMismatch" ? 409 : 400), body);
  });

  detail::exclusive_bind(*server_);
  const bool ok = bind.port == 0 ? (port_ = server_->bind_to_any_port(bind.host)) > 0
                                 : server_->bind_to_port(bind.host, bind.port);
  if (!ok) {
    throw Error(Errc::BindError, bind.host + ":" + std::to_string(bind.port),
                "cannot bind model server to " + bind.host + ":" + std::to_string(bind.port));
  }
  if (bind.port != 0) {
    port_ = bind.port;
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  log()->info("model server listening on {}:{}", bind.host, port_);
}

ModelServer::~ModelServer()
{
  stop();
}

void ModelServer::stop()
{
  if (server_) {
    server_->stop();
  }
  if (thread_.joinable()) {
    thread_.join();
  }
}

StandaloneModelServer serve_model_http(Model model, const FeatureSchema& schema, const HostPort& bind)
{
  if (model.feature_schema_hash.empty()) {
    model.feature_schema_hash = schema_hash(schema);
  }
  auto holder = std::make_shared<ModelHolder>(std::move(model));
  auto source = [holder] { return ServedModel{holder->current(), 1.0}; };
  auto deploy = [holder](const json& doc) {
    CommandAck ack;
    try {
      ack.model_version = holder->swap(artifact_from_json(doc));
      ack.ok = true;
    } catch (const Error& e) {
      ack.model_version = holder->current()->version;
      ack.error = std::string(to_string(e.code()));
    }
    return ack;
  };
  auto server = std::make_unique<ModelServer>(bind, schema, source, deploy);
  return {std::move(holder), std::move(server)};
}

std::unique_ptr<ModelServer> serve_agent_http(InferenceAgent& agent, const HostPort& bind)
{
  auto source = [&agent] { return ServedModel{agent.model(), agent.confidence_estimate()}; };
  auto deploy = [&agent](const json& doc) {
    return agent.submit(SwapCommand{make_request_id(), doc}).get();
  };
  return std::make_unique<ModelServer>(bind, agent.schema(), source, deploy);
}

}  // namespace edgeai
