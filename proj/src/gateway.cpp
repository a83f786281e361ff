#include "edgeai/gateway.hpp"

#include <httplib.h>

#include <cmath>
#include <limits>

#include "edgeai/designer.hpp"
#include "http_bind.hpp"
#include "edgeai/errors.hpp"
#include "edgeai/logging.hpp"

namespace edgeai {

using nlohmann::json;

// Fan-out of server-sent events. Broadcasting never blocks: a client whose
// queue is full is dropped and must reconnect for a fresh snapshot.
class SseHub {
 public:
  struct Client {
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<std::string> queue;
    bool dropped = false;
  };

  explicit SseHub(std::size_t queue_limit) : limit_(std::max<std::size_t>(queue_limit, 1)) {}

  std::shared_ptr<Client> add(std::string first_chunk)
  {
    auto client = std::make_shared<Client>();
    client->queue.push_back(std::move(first_chunk));
    std::lock_guard lock(mutex_);
    clients_.push_back(client);
    return client;
  }

  void remove(const std::shared_ptr<Client>& client)
  {
    std::lock_guard lock(mutex_);
    std::erase(clients_, client);
  }

  void broadcast(const std::string& chunk)
  {
    std::lock_guard lock(mutex_);
    for (auto it = clients_.begin(); it != clients_.end();) {
      auto& client = *it;
      {
        std::lock_guard client_lock(client->mutex);
        if (client->queue.size() >= limit_) {
          client->dropped = true;
        } else {
          client->queue.push_back(chunk);
        }
      }
      client->cv.notify_all();
      if (client->dropped) {
        it = clients_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void close_all()
  {
    std::lock_guard lock(mutex_);
    for (auto& client : clients_) {
      {
        std::lock_guard client_lock(client->mutex);
        client->dropped = true;
      }
      client->cv.notify_all();
    }
    clients_.clear();
  }

  std::size_t size() const
  {
    std::lock_guard lock(mutex_);
    return clients_.size();
  }

 private:
  std::size_t limit_;
  mutable std::mutex mutex_;
  std::vector<std::shared_ptr<Client>> clients_;
};

namespace {

std::string sse_event(std::string_view event, const std::string& data, std::optional<std::uint64_t> id)
{
  std::string out;
  if (id) {
    out += "id: " + std::to_string(*id) + "\n";
  }
  out += "event: ";
  out += event;
  out += "\ndata: " + data + "\n\n";
  return out;
}

void reply(httplib::Response& res, int status, const json& body)
{
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

int http_status(Errc code)
{
  switch (code) {
    case Errc::RowNotFound: return 404;
    case Errc::NoSamples: return 404;
    case Errc::NoCorrections: return 409;
    case Errc::CommandTimeout:
    case Errc::DeployTimeout: return 504;
    case Errc::TargetUnreachable: return 502;
    case Errc::StageFailure:
    case Errc::CommandRejected:
    case Errc::SchemaHashMismatch: return 422;
    default: return 400;
  }
}

void reply_error(httplib::Response& res, const Error& e)
{
  reply(res, http_status(e.code()), {{"error", to_string(e.code())}, {"message", e.what()}});
}

json parse_body(const httplib::Request& req)
{
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw Error(Errc::ParseError, "body", std::string("body is not JSON: ") + e.what());
  }
}

json features_json(const Observation& observation, const FeatureSchema& schema)
{
  json features = json::object();
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (observation.values[i]) {
      features[schema.features[i].name] = *observation.values[i];
    }
  }
  return features;
}

}  // namespace

Gateway::Gateway(BusPtr session, FeatureSchema schema, DeviationPolicy policy, TopicSet topics,
                 GatewayOptions options)
    : session_(std::move(session)),
      schema_(std::move(schema)),
      policy_(policy),
      topics_(std::move(topics)),
      options_(std::move(options)),
      store_(schema_, policy_, options_.capacity),
      hub_(std::make_shared<SseHub>(options_.client_queue))
{
  store_.add_listener([hub = hub_, schema = schema_](const RowEvent& event, const RecordRow& row) {
    hub->broadcast(sse_event(to_string(event.kind), row_to_json(row, schema).dump(), event.seq));
  });
}

Gateway::~Gateway()
{
  stop();
}

void Gateway::start()
{
  if (options_.serve_http && !server_) {
    server_ = std::make_unique<httplib::Server>();
    server_->new_task_queue = [] { return new httplib::ThreadPool(32); };
    install_routes();
    detail::exclusive_bind(*server_);
    const HostPort& bind = options_.bind;
    const bool ok = bind.port == 0 ? (port_ = server_->bind_to_any_port(bind.host)) > 0
                                   : server_->bind_to_port(bind.host, bind.port);
    if (!ok) {
      server_.reset();
      throw Error(Errc::BindError, bind.host + ":" + std::to_string(bind.port),
                  "cannot bind gateway to " + bind.host + ":" + std::to_string(bind.port));
    }
    if (bind.port != 0) {
      port_ = bind.port;
    }
    http_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    log()->info("gateway listening on {}:{}", bind.host, port_);
  }
  recalibration_thread_ = std::thread([this] { recalibration_loop(); });
  command_sub_ = session_->subscribe(topics_.command, [this](const Envelope& e) { on_command(e); });
  explanation_sub_ =
      session_->subscribe(topics_.explanation, [this](const Envelope& e) { on_explanation(e); });
  result_sub_ = session_->subscribe(topics_.output, [this](const Envelope& e) { on_result(e); });
}

void Gateway::stop()
{
  result_sub_.unsubscribe();
  explanation_sub_.unsubscribe();
  command_sub_.unsubscribe();
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (recalibration_thread_.joinable()) {
    recalibration_thread_.join();
  }
  hub_->close_all();
  if (server_) {
    server_->stop();
  }
  if (http_thread_.joinable()) {
    http_thread_.join();
  }
}

void Gateway::on_result(const Envelope& envelope)
{
  RowStore::Recorded recorded;
  try {
    recorded = store_.record_result(envelope.payload);
  } catch (const Error& e) {
    log()->warn("gateway: rejected result: {}", e.what());
    return;
  }
  if (!recorded.created) {
    std::lock_guard lock(mutex_);
    ++duplicates_;
    return;
  }
  std::optional<ExplanationMessage> early;
  {
    std::lock_guard lock(mutex_);
    if (auto it = pending_explanations_.find(recorded.row.row_id); it != pending_explanations_.end()) {
      early = std::move(it->second);
      pending_explanations_.erase(it);
    }
  }
  if (early) {
    store_.attach_explanation(*early);
  }
  note_created(recorded.row);
  cv_.notify_all();
}

void Gateway::on_explanation(const Envelope& envelope)
{
  ExplanationMessage explanation;
  try {
    explanation = decode_explanation(envelope.payload);
  } catch (const Error& e) {
    log()->warn("gateway: rejected explanation: {}", e.what());
    return;
  }
  if (!store_.attach_explanation(explanation)) {
    // The row can still be in flight on the output topic.
    std::lock_guard lock(mutex_);
    pending_explanations_[explanation.row_id] = std::move(explanation);
    while (pending_explanations_.size() > 10'000) {
      pending_explanations_.erase(pending_explanations_.begin());
    }
  }
}

void Gateway::on_command(const Envelope& envelope)
{
  Command command;
  try {
    command = decode_command(envelope.payload);
  } catch (const Error&) {
    return;
  }
  const auto* ack = std::get_if<CommandAck>(&command);
  if (ack == nullptr) {
    return;
  }
  std::shared_ptr<std::promise<CommandAck>> waiter;
  {
    std::lock_guard lock(mutex_);
    if (auto it = pending_acks_.find(ack->request_id); it != pending_acks_.end()) {
      waiter = it->second;
      pending_acks_.erase(it);
    }
  }
  if (waiter) {
    waiter->set_value(*ack);
  }
}

void Gateway::note_created(const RecordRow& row)
{
  if (!options_.auto_recalibrate) {
    return;
  }
  std::vector<std::int64_t> ids;
  {
    std::lock_guard lock(mutex_);
    if (row.prediction.model_version < auto_.min_version) {
      return;
    }
    window_.push_back(row.row_id);
    while (window_.size() > options_.auto_window) {
      window_.pop_front();
    }
    ids.assign(window_.begin(), window_.end());
  }
  std::size_t nonok = 0;
  for (auto id : ids) {
    const auto current = store_.get(id);
    if (current && current->status == StatusFlag::NonOK) {
      ++nonok;
    }
  }
  const double fraction = ids.empty() ? 0.0 : static_cast<double>(nonok) / static_cast<double>(ids.size());
  bool fire = false;
  {
    std::lock_guard lock(mutex_);
    auto_.window_fraction = fraction;
    auto_.window_rows = ids.size();
    if (ids.size() >= options_.auto_window && fraction > options_.auto_threshold &&
        !auto_requested_ && !auto_.in_flight) {
      auto_requested_ = true;
      fire = true;
    }
  }
  if (fire) {
    log()->info("gateway: NonOK fraction {:.2f} over {} rows, requesting recalibration", fraction,
                ids.size());
    cv_.notify_all();
  }
}

void Gateway::recalibration_loop()
{
  std::unique_lock lock(mutex_);
  while (true) {
    cv_.wait(lock, [&] { return stopping_ || auto_requested_; });
    if (stopping_) {
      return;
    }
    auto_.in_flight = true;
    lock.unlock();
    std::optional<CommandReceipt> receipt;
    try {
      receipt = trigger_recalibration(RecalibrationMode::Auto);
    } catch (const Error& e) {
      log()->warn("gateway: automatic recalibration failed: {}", e.what());
    }
    lock.lock();
    if (receipt) {
      auto_.min_version = receipt->model_version;
      window_.clear();
      auto_.window_fraction = 0.0;
      auto_.window_rows = 0;
      ++auto_.fired;
    }
    auto_.in_flight = false;
    auto_requested_ = false;
    cv_.notify_all();
  }
}

std::vector<Correction> Gateway::correction_set(RecalibrationMode mode) const
{
  std::vector<Correction> out;
  if (mode == RecalibrationMode::Manual) {
    for (const auto& row : store_.rows()) {
      if (row.target_provenance == Provenance::HumanEdited && row.observation.target) {
        out.push_back({features_json(row.observation, schema_), *row.observation.target});
      }
    }
    return out;
  }
  std::vector<std::int64_t> ids;
  {
    std::lock_guard lock(mutex_);
    ids.assign(window_.begin(), window_.end());
  }
  for (auto it = ids.rbegin(); it != ids.rend() && out.size() < options_.auto_corrections; ++it) {
    const auto row = store_.get(*it);
    if (row && row->status == StatusFlag::NonOK && row->observation.target) {
      out.push_back({features_json(row->observation, schema_), *row->observation.target});
    }
  }
  std::reverse(out.begin(), out.end());
  return out;
}

CommandReceipt Gateway::trigger_recalibration(RecalibrationMode mode)
{
  std::lock_guard serial(recalibration_mutex_);
  RecalibrateCommand command{make_request_id(), correction_set(mode)};
  if (command.corrections.empty()) {
    throw Error(Errc::NoCorrections, "corrections", "no corrected rows to recalibrate from");
  }
  auto promise = std::make_shared<std::promise<CommandAck>>();
  auto future = promise->get_future();
  {
    std::lock_guard lock(mutex_);
    pending_acks_[command.request_id] = promise;
  }
  CommandReceipt receipt{command.request_id, 0, command.corrections.size(), mode};
  session_->publish(topics_.command, encode_command(command));
  if (future.wait_for(options_.command_timeout) != std::future_status::ready) {
    std::lock_guard lock(mutex_);
    pending_acks_.erase(command.request_id);
    throw Error(Errc::CommandTimeout, "recalibrate",
                "no acknowledgment within " + std::to_string(options_.command_timeout.count()) + " ms");
  }
  const CommandAck ack = future.get();
  if (!ack.ok) {
    throw Error(Errc::CommandRejected, "recalibrate", "agent rejected recalibration: " + ack.error);
  }
  receipt.model_version = ack.model_version;
  log()->info("gateway: recalibrated with {} corrections, model version {}", receipt.corrections,
              receipt.model_version);
  return receipt;
}

AutoRecalibrationState Gateway::auto_state() const
{
  std::lock_guard lock(mutex_);
  AutoRecalibrationState state = auto_;
  state.in_flight = auto_.in_flight || auto_requested_;
  return state;
}

bool Gateway::wait_recalibration_idle(std::chrono::milliseconds timeout)
{
  std::unique_lock lock(mutex_);
  return cv_.wait_for(lock, timeout, [&] { return !auto_requested_ && !auto_.in_flight; });
}

bool Gateway::wait_rows(std::size_t count, std::chrono::milliseconds timeout)
{
  std::unique_lock lock(mutex_);
  return cv_.wait_for(lock, timeout, [&] { return store_.size() >= count; });
}

std::uint64_t Gateway::duplicates() const
{
  std::lock_guard lock(mutex_);
  return duplicates_;
}

json Gateway::config_json() const
{
  return json{{"schema", schema_to_json(schema_)},
              {"deviation_policy", policy_to_json(policy_)},
              {"topics",
               {{"input", topics_.input},
                {"output", topics_.output},
                {"command", topics_.command},
                {"explanation", topics_.explanation}}},
              {"auto_recalibration",
               {{"enabled", options_.auto_recalibrate},
                {"window", options_.auto_window},
                {"threshold", options_.auto_threshold}}},
              {"snapshot_rows", options_.snapshot_rows}};
}

void Gateway::install_routes()
{
  httplib::Server& server = *server_;

  server.Get("/api/rows", [this](const httplib::Request& req, httplib::Response& res) {
    std::size_t limit = options_.snapshot_rows;
    if (req.has_param("limit")) {
      try {
        const long long value = std::stoll(req.get_param_value("limit"));
        if (value < 0) {
          throw std::invalid_argument("negative");
        }
        limit = static_cast<std::size_t>(value);
      } catch (const std::exception&) {
        reply(res, 400, {{"error", "ValidationError"}, {"message", "limit must be a non-negative integer"}});
        return;
      }
    }
    json rows = json::array();
    for (const auto& row : store_.rows(limit)) {
      rows.push_back(row_to_json(row, schema_));
    }
    reply(res, 200, rows);
  });

  server.Get("/api/stream", [this](const httplib::Request&, httplib::Response& res) {
    std::shared_ptr<SseHub::Client> client;
    store_.with_snapshot(options_.snapshot_rows, [&](const std::vector<RecordRow>& rows) {
      json snapshot = json::array();
      for (const auto& row : rows) {
        snapshot.push_back(row_to_json(row, schema_));
      }
      client = hub_->add(sse_event("snapshot", snapshot.dump(), std::nullopt));
    });
    res.set_header("Cache-Control", "no-cache");
    res.set_header("X-Accel-Buffering", "no");
    auto last_write = std::make_shared<std::chrono::steady_clock::time_point>(std::chrono::steady_clock::now());
    res.set_chunked_content_provider(
        "text/event-stream",
        [client, last_write](std::size_t, httplib::DataSink& sink) {
          std::unique_lock lock(client->mutex);
          client->cv.wait_for(lock, std::chrono::milliseconds(250),
                              [&] { return client->dropped || !client->queue.empty(); });
          if (client->dropped && client->queue.empty()) {
            return false;
          }
          while (!client->queue.empty()) {
            std::string chunk = std::move(client->queue.front());
            client->queue.pop_front();
            lock.unlock();
            if (!sink.write(chunk.data(), chunk.size())) {
              return false;
            }
            *last_write = std::chrono::steady_clock::now();
            lock.lock();
          }
          if (std::chrono::steady_clock::now() - *last_write > std::chrono::seconds(10)) {
            static constexpr std::string_view ping = ": keepalive\n\n";
            lock.unlock();
            if (!sink.write(ping.data(), ping.size())) {
              return false;
            }
            *last_write = std::chrono::steady_clock::now();
          }
          return true;
        },
        [hub = hub_, client](bool) { hub->remove(client); });
  });

  server.Patch(R"(/api/rows/(-?\d+)/target)", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const std::int64_t row_id = std::stoll(req.matches[1]);
      const json body = parse_body(req);
      if (!body.is_object() || !body.contains("target") || !body["target"].is_number()) {
        throw Error(Errc::NonFiniteTarget, "target", "body must be {\"target\": <finite number>}");
      }
      const RecordRow row = store_.edit_target(row_id, body["target"].get<double>());
      reply(res, 200, row_to_json(row, schema_));
    } catch (const Error& e) {
      reply_error(res, e);
    } catch (const std::out_of_range&) {
      reply(res, 404, {{"error", "RowNotFound"}, {"message", "row id out of range"}});
    }
  });

  server.Post("/api/recalibrate", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      RecalibrationMode mode = RecalibrationMode::Manual;
      if (!req.body.empty()) {
        const json body = parse_body(req);
        const std::string text = body.value("mode", std::string("manual"));
        if (text == "auto") {
          mode = RecalibrationMode::Auto;
        } else if (text != "manual") {
          throw Error(Errc::ValidationError, "mode", "mode must be \"manual\" or \"auto\"");
        }
      }
      const CommandReceipt receipt = trigger_recalibration(mode);
      reply(res, 200,
            {{"ok", true},
             {"request_id", receipt.request_id},
             {"model_version", receipt.model_version},
             {"corrections", receipt.corrections},
             {"mode", mode == RecalibrationMode::Manual ? "manual" : "auto"}});
    } catch (const Error& e) {
      reply_error(res, e);
    }
  });

  server.Get("/api/recalibration", [this](const httplib::Request&, httplib::Response& res) {
    const auto state = auto_state();
    reply(res, 200,
          {{"window_fraction", state.window_fraction},
           {"window_rows", state.window_rows},
           {"window", options_.auto_window},
           {"threshold", options_.auto_threshold},
           {"min_version", state.min_version},
           {"in_flight", state.in_flight},
           {"fired", state.fired}});
  });

  server.Get("/api/export/nonok", [this](const httplib::Request&, httplib::Response& res) {
    res.set_header("Content-Disposition", "attachment; filename=\"nonok.json\"");
    reply(res, 200, store_.export_nonok());
  });

  server.Get("/api/metrics/latency", [this](const httplib::Request&, httplib::Response& res) {
    try {
      reply(res, 200, latency_to_json(store_.latency_report()));
    } catch (const Error& e) {
      reply_error(res, e);
    }
  });

  server.Get("/api/config", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, config_json());
  });

  server.Post("/api/pipelines/validate", [](const httplib::Request& req, httplib::Response& res) {
    try {
      const ValidationReport report = validate_pipeline(pipeline_from_json(parse_body(req)));
      reply(res, 200, report.to_json());
    } catch (const Error& e) {
      reply_error(res, e);
    }
  });

  server.Post("/api/pipelines/run", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const PipelineSpec spec = pipeline_from_json(parse_body(req));
      const ValidationReport report = validate_pipeline(spec);
      if (!report.valid()) {
        reply(res, 400, report.to_json());
        return;
      }
      Dataset dataset;
      dataset.feature_names = schema_.names();
      for (const auto& row : store_.rows()) {
        if (!row.observation.target) {
          continue;
        }
        std::vector<double> x;
        for (const auto& value : row.observation.values) {
          x.push_back(value.value_or(std::numeric_limits<double>::quiet_NaN()));
        }
        dataset.add(std::move(x), *row.observation.target);
      }
      RunContext context{schema_, policy_, DeployOptions{session_, topics_.command, options_.command_timeout},
                         wall_clock_ms()};
      reply(res, 200, run_pipeline(spec, dataset, context).to_json());
    } catch (const Error& e) {
      reply_error(res, e);
    }
  });

  if (!options_.ui_dir.empty()) {
    server.set_mount_point("/", options_.ui_dir.string());
  }
}

}  // namespace edgeai
