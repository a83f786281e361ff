#include "edgeai/inference.hpp"

#include <algorithm>

#include "edgeai/errors.hpp"
#include "edgeai/logging.hpp"

namespace edgeai {

using nlohmann::json;

ModelHolder::ModelHolder(Model initial, std::size_t history)
    : current_(std::make_shared<const Model>(std::move(initial))), capacity_(history)
{
}

std::shared_ptr<const Model> ModelHolder::current() const
{
  std::lock_guard lock(mutex_);
  return current_;
}

std::int64_t ModelHolder::install(Model next)
{
  auto replacement = std::make_shared<const Model>(std::move(next));
  std::lock_guard lock(mutex_);
  std::erase_if(history_, [&](const auto& m) { return m->version == replacement->version; });
  history_.push_back(current_);
  while (history_.size() > capacity_) {
    history_.pop_front();
  }
  current_ = replacement;
  return current_->version;
}

std::int64_t ModelHolder::swap(const ModelArtifact& artifact)
{
  const auto active = current();
  if (!active->feature_schema_hash.empty() &&
      artifact.model.feature_schema_hash != active->feature_schema_hash) {
    throw Error(Errc::SchemaHashMismatch, "feature_schema_hash",
                "artifact schema " + artifact.model.feature_schema_hash +
                    " does not match running schema " + active->feature_schema_hash);
  }
  Model next = artifact.model;
  next.version = std::max(next.version, active->version + 1);
  return install(std::move(next));
}

std::int64_t ModelHolder::rollback(std::int64_t version)
{
  std::lock_guard lock(mutex_);
  auto it = std::find_if(history_.begin(), history_.end(),
                         [&](const auto& m) { return m->version == version; });
  if (it == history_.end()) {
    throw Error(Errc::CommandRejected, "version",
                "version " + std::to_string(version) + " is not retained");
  }
  auto restored = *it;
  history_.erase(it);
  history_.push_back(current_);
  while (history_.size() > capacity_) {
    history_.pop_front();
  }
  current_ = restored;
  return current_->version;
}

std::vector<std::int64_t> ModelHolder::retained_versions() const
{
  std::lock_guard lock(mutex_);
  std::vector<std::int64_t> out;
  for (const auto& m : history_) {
    out.push_back(m->version);
  }
  return out;
}

namespace {

Model stamped(Model model, const std::string& hash)
{
  if (model.feature_schema_hash.empty()) {
    model.feature_schema_hash = hash;
  } else if (model.feature_schema_hash != hash) {
    throw Error(Errc::SchemaHashMismatch, "feature_schema_hash",
                "model was built for schema " + model.feature_schema_hash + ", running " + hash);
  }
  return model;
}

Dataset corrections_dataset(const std::vector<Correction>& corrections, const FeatureSchema& schema)
{
  Dataset data;
  data.feature_names = schema.names();
  for (const auto& correction : corrections) {
    json doc = correction.features;
    doc.erase(schema.target_name);
    Observation observation = validate_observation_against_schema(doc, schema);
    data.add(model_input(observation, schema), correction.target);
  }
  return data;
}

}  // namespace

InferenceAgent::InferenceAgent(BusPtr session, Model model, FeatureSchema schema, TopicSet topics,
                               DeviationPolicy policy)
    : session_(std::move(session)),
      schema_(std::move(schema)),
      schema_hash_(schema_hash(schema_)),
      topics_(std::move(topics)),
      policy_(policy),
      holder_(stamped(std::move(model), schema_hash_))
{
  if (holder_.current()->d != schema_.size()) {
    throw Error(Errc::DimensionMismatch, "model",
                "model expects " + std::to_string(holder_.current()->d) + " features, schema has " +
                    std::to_string(schema_.size()));
  }
}

InferenceAgent::~InferenceAgent()
{
  stop();
}

void InferenceAgent::start()
{
  if (thread_.joinable()) {
    return;
  }
  thread_ = std::thread([this] { loop(); });
  input_sub_ = session_->subscribe(topics_.input, [this](const Envelope& envelope) {
    enqueue(InputItem{envelope.payload, monotonic_us()});
  });
  command_sub_ = session_->subscribe(topics_.command, [this](const Envelope& envelope) {
    enqueue(CommandItem{envelope.payload});
  });
}

void InferenceAgent::stop()
{
  input_sub_.unsubscribe();
  command_sub_.unsubscribe();
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable()) {
    thread_.join();
  }
}

double InferenceAgent::confidence_estimate() const
{
  return confidence_.load();
}

InferenceStats InferenceAgent::stats() const
{
  std::lock_guard lock(mutex_);
  return stats_;
}

std::future<CommandAck> InferenceAgent::submit(Command command)
{
  auto promise = std::make_shared<std::promise<CommandAck>>();
  auto future = promise->get_future();
  enqueue(SubmittedItem{std::move(command), std::move(promise)});
  return future;
}

bool InferenceAgent::wait_idle(std::chrono::milliseconds timeout)
{
  std::unique_lock lock(mutex_);
  return cv_.wait_for(lock, timeout, [&] { return queue_.empty() && !busy_; });
}

void InferenceAgent::enqueue(Item item)
{
  {
    std::lock_guard lock(mutex_);
    queue_.push_back(std::move(item));
  }
  cv_.notify_all();
}

void InferenceAgent::loop()
{
  while (true) {
    Item item;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) {
        return;
      }
      item = std::move(queue_.front());
      queue_.pop_front();
      busy_ = true;
    }
    try {
      if (const auto* input = std::get_if<InputItem>(&item)) {
        handle_input(*input);
      } else if (const auto* raw = std::get_if<CommandItem>(&item)) {
        Command command = decode_command(raw->payload);
        if (!std::holds_alternative<CommandAck>(command)) {
          publish_ack(apply(command));
        }
      } else {
        auto& submitted = std::get<SubmittedItem>(item);
        const CommandAck ack = apply(submitted.command);
        publish_ack(ack);
        submitted.promise->set_value(ack);
      }
    } catch (const std::exception& e) {
      log()->warn("inference: dropped message: {}", e.what());
      std::lock_guard lock(mutex_);
      ++stats_.dropped;
    }
    {
      std::lock_guard lock(mutex_);
      busy_ = false;
    }
    cv_.notify_all();
  }
}

void InferenceAgent::handle_input(const InputItem& item)
{
  InputMessage input = decode_input(item.payload, schema_);
  const auto model = holder_.current();
  const std::vector<double> x = model_input(input.observation, schema_);

  ResultMessage result;
  result.row_id = input.row_id.value_or(next_row_id());
  result.observation = std::move(input.observation);
  result.prediction = predict(*model, x, tracker_, result.observation.target);
  result.prediction.row_id = result.row_id;
  result.status = classify(result.prediction, result.observation.target, policy_);
  result.ingest_us = input.ingest_us.value_or(item.received_us);
  confidence_.store(tracker_.confidence(std::nullopt));
  result.publish_us = monotonic_us();
  session_->publish(topics_.output, encode_result(result, schema_));
  std::lock_guard lock(mutex_);
  ++stats_.results;
}

CommandAck InferenceAgent::apply(const Command& command)
{
  CommandAck ack;
  {
    std::lock_guard lock(mutex_);
    ++stats_.commands;
  }
  try {
    if (const auto* recal = std::get_if<RecalibrateCommand>(&command)) {
      ack.request_id = recal->request_id;
      const Dataset data = corrections_dataset(recal->corrections, schema_);
      ack.model_version = holder_.install(recalibrate_auto(*holder_.current(), data));
    } else if (const auto* swap = std::get_if<SwapCommand>(&command)) {
      ack.request_id = swap->request_id;
      ack.model_version = holder_.swap(artifact_from_json(swap->artifact));
    } else if (const auto* rollback = std::get_if<RollbackCommand>(&command)) {
      ack.request_id = rollback->request_id;
      ack.model_version = holder_.rollback(rollback->version);
    } else {
      throw Error(Errc::CommandRejected, "cmd", "acks are not commands");
    }
    ack.ok = true;
    log()->info("inference: model version {} active", ack.model_version);
  } catch (const Error& e) {
    ack.ok = false;
    ack.model_version = holder_.current()->version;
    ack.error = std::string(to_string(e.code()));
    log()->warn("inference: command {} rejected: {}", ack.request_id, e.what());
  }
  return ack;
}

void InferenceAgent::publish_ack(const CommandAck& ack)
{
  session_->publish(topics_.command, encode_command(ack));
}

std::unique_ptr<InferenceAgent> run_inference_agent(BusPtr session, Model model,
                                                    const FeatureSchema& schema,
                                                    const TopicSet& topics,
                                                    const DeviationPolicy& policy)
{
  auto agent =
      std::make_unique<InferenceAgent>(std::move(session), std::move(model), schema, topics, policy);
  agent->start();
  return agent;
}

}  // namespace edgeai
