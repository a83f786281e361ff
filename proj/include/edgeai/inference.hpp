#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <thread>
#include <variant>

#include "edgeai/bus.hpp"
#include "edgeai/config.hpp"
#include "edgeai/messages.hpp"
#include "edgeai/model.hpp"

namespace httplib {
class Server;
}

namespace edgeai {

// Current model plus the last few replaced ones. Readers take immutable
// snapshots; each install replaces the pointer in one step.
class ModelHolder {
 public:
  static constexpr std::size_t kDefaultHistory = 5;

  explicit ModelHolder(Model initial, std::size_t history = kDefaultHistory);

  [[nodiscard]] std::shared_ptr<const Model> current() const;
  // Returns the installed version.
  std::int64_t install(Model next);
  // Installs the artifact's model with a version above the current one.
  // Throws SchemaHashMismatch when the artifact was built for another schema.
  std::int64_t swap(const ModelArtifact& artifact);
  // Throws CommandRejected when the version is not retained.
  std::int64_t rollback(std::int64_t version);
  [[nodiscard]] std::vector<std::int64_t> retained_versions() const;

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const Model> current_;
  std::deque<std::shared_ptr<const Model>> history_;
  std::size_t capacity_;
};

struct InferenceStats {
  std::uint64_t results = 0;
  std::uint64_t dropped = 0;
  std::uint64_t commands = 0;
};

// Consumes the input topic, publishes results on the output topic and
// applies commands from the command topic. Inputs and commands share one
// event loop, so a result is always computed from a single model version.
class InferenceAgent {
 public:
  // Throws SchemaHashMismatch when the model was built for a different schema.
  InferenceAgent(BusPtr session, Model model, FeatureSchema schema, TopicSet topics,
                 DeviationPolicy policy);
  ~InferenceAgent();
  InferenceAgent(const InferenceAgent&) = delete;
  InferenceAgent& operator=(const InferenceAgent&) = delete;

  void start();
  void stop();

  [[nodiscard]] std::shared_ptr<const Model> model() const { return holder_.current(); }
  [[nodiscard]] std::int64_t model_version() const { return holder_.current()->version; }
  [[nodiscard]] std::vector<std::int64_t> retained_versions() const
  {
    return holder_.retained_versions();
  }
  // Confidence for a row without a target, from recent errors.
  [[nodiscard]] double confidence_estimate() const;
  [[nodiscard]] InferenceStats stats() const;
  [[nodiscard]] const FeatureSchema& schema() const noexcept { return schema_; }

  // Runs a command on the event loop; the ack is also published.
  std::future<CommandAck> submit(Command command);
  // True once the queue is drained and nothing is being processed.
  bool wait_idle(std::chrono::milliseconds timeout);

 private:
  struct InputItem {
    std::string payload;
    std::int64_t received_us;
  };
  struct CommandItem {
    std::string payload;
  };
  struct SubmittedItem {
    Command command;
    std::shared_ptr<std::promise<CommandAck>> promise;
  };
  using Item = std::variant<InputItem, CommandItem, SubmittedItem>;

  void enqueue(Item item);
  void loop();
  void handle_input(const InputItem& item);
  CommandAck apply(const Command& command);
  void publish_ack(const CommandAck& ack);

  BusPtr session_;
  FeatureSchema schema_;
  std::string schema_hash_;
  TopicSet topics_;
  DeviationPolicy policy_;
  ModelHolder holder_;
  ConfidenceTracker tracker_;

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Item> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  std::atomic<double> confidence_{1.0};
  InferenceStats stats_;
  SubscriptionHandle input_sub_;
  SubscriptionHandle command_sub_;
  std::thread thread_;
};

[[nodiscard]] std::unique_ptr<InferenceAgent> run_inference_agent(BusPtr session, Model model,
                                                                  const FeatureSchema& schema,
                                                                  const TopicSet& topics,
                                                                  const DeviationPolicy& policy);

struct ServedModel {
  std::shared_ptr<const Model> model;
  double confidence = 1.0;
};

// POST /predict, GET /health and POST /deploy over HTTP.
class ModelServer {
 public:
  using Source = std::function<ServedModel()>;
  using DeployHandler = std::function<CommandAck(const nlohmann::json& artifact)>;

  // Throws Error(BindError). Port 0 picks a free port.
  ModelServer(const HostPort& bind, FeatureSchema schema, Source source, DeployHandler deploy);
  ~ModelServer();
  ModelServer(const ModelServer&) = delete;
  ModelServer& operator=(const ModelServer&) = delete;

  [[nodiscard]] int port() const noexcept { return port_; }
  void stop();

 private:
  FeatureSchema schema_;
  Source source_;
  DeployHandler deploy_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

// Server over its own model holder; /deploy swaps that holder's model.
struct StandaloneModelServer {
  std::shared_ptr<ModelHolder> holder;
  std::unique_ptr<ModelServer> server;
};

[[nodiscard]] StandaloneModelServer serve_model_http(Model model, const FeatureSchema& schema,
                                                     const HostPort& bind);

// Server that reads the agent's snapshots and routes /deploy to its event loop.
[[nodiscard]] std::unique_ptr<ModelServer> serve_agent_http(InferenceAgent& agent,
                                                            const HostPort& bind);

}  // namespace edgeai
