#include "edgeai/genai_agent.hpp"

#include "edgeai/logging.hpp"
#include "edgeai/messages.hpp"
#include "edgeai/model.hpp"

namespace edgeai {

namespace {

NamedValues named_features(const Observation& observation, const FeatureSchema& schema)
{
  NamedValues out;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (observation.values[i]) {
      out.emplace_back(schema.features[i].name, *observation.values[i]);
    }
  }
  return out;
}

}  // namespace

GenAiAgent::GenAiAgent(BusPtr session, TopicSet topics, GenAiConfig config,
                       DeviationPolicy policy, FeatureSchema schema,
                       std::shared_ptr<LlmClient> client, GenAiAgentOptions options)
    : session_(std::move(session)),
      topics_(std::move(topics)),
      config_(std::move(config)),
      policy_(policy),
      schema_(std::move(schema)),
      client_(std::move(client)),
      options_(std::move(options)),
      buffer_(options_.buffer_capacity),
      templates_(config_.template_dir)
{
}

GenAiAgent::~GenAiAgent()
{
  stop();
}

void GenAiAgent::start()
{
  if (monitor_.joinable()) {
    return;
  }
  if (!templates_.dir().empty()) {
    templates_.reload();
  }
  monitor_ = std::thread([this] { monitor_loop(); });
  for (std::size_t i = 0; i < std::max<std::size_t>(options_.max_in_flight, 1); ++i) {
    workers_.emplace_back([this] { worker_loop(); });
  }
  subscription_ = session_->subscribe(topics_.output, [this](const Envelope& envelope) {
    {
      std::lock_guard lock(mutex_);
      inbox_.push_back(envelope.payload);
    }
    cv_.notify_all();
  });
}

void GenAiAgent::stop()
{
  subscription_.unsubscribe();
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (monitor_.joinable()) {
    monitor_.join();
  }
  for (auto& worker : workers_) {
    if (worker.joinable()) {
      worker.join();
    }
  }
  workers_.clear();
}

GenAiStats GenAiAgent::stats() const
{
  std::lock_guard lock(mutex_);
  return stats_;
}

bool GenAiAgent::wait_idle(std::chrono::milliseconds timeout)
{
  std::unique_lock lock(mutex_);
  return cv_.wait_for(lock, timeout, [&] {
    return inbox_.empty() && !monitor_busy_ && jobs_.empty() && running_ == 0;
  });
}

void GenAiAgent::monitor_loop()
{
  auto next_poll = std::chrono::steady_clock::now() + options_.template_poll;
  while (true) {
    std::string payload;
    {
      std::unique_lock lock(mutex_);
      cv_.wait_until(lock, next_poll, [&] { return stopping_ || !inbox_.empty(); });
      if (stopping_) {
        return;
      }
      if (!inbox_.empty()) {
        payload = std::move(inbox_.front());
        inbox_.pop_front();
        monitor_busy_ = true;
      }
    }
    if (std::chrono::steady_clock::now() >= next_poll) {
      if (!templates_.dir().empty()) {
        templates_.poll();
      }
      next_poll = std::chrono::steady_clock::now() + options_.template_poll;
    }
    if (payload.empty()) {
      continue;
    }
    try {
      handle_result(payload);
    } catch (const std::exception& e) {
      log()->warn("genai: ignoring output message: {}", e.what());
    }
    {
      std::lock_guard lock(mutex_);
      monitor_busy_ = false;
    }
    cv_.notify_all();
  }
}

void GenAiAgent::handle_result(const std::string& payload)
{
  const ResultMessage result = decode_result(payload, schema_);
  {
    std::lock_guard lock(mutex_);
    ++stats_.rows_seen;
  }
  const auto& target = result.observation.target;
  const bool flagged =
      target && should_trigger(result.prediction.predicted, *target, policy_);

  ExplanationRequest request;
  request.row_id = result.row_id;
  request.features = named_features(result.observation, schema_);
  request.predicted = result.prediction.predicted;
  request.expected = target.value_or(result.prediction.predicted);
  request.confidence = result.prediction.confidence;
  request.task_type = options_.task;
  request.response_format = options_.format;
  request.domain_instructions = options_.instructions;

  if (options_.task == TaskType::ExplainPrediction) {
    if (!flagged) {
      return;
    }
    {
      std::lock_guard lock(mutex_);
      ++stats_.triggered;
    }
    dispatch(Job{{std::move(request)}, templates_.resolve(options_.task), buffer_.exemplars()});
    return;
  }

  // Labeling: confidently labeled rows become exemplars, the rest wait for labels.
  if (target && !flagged) {
    buffer_.add_exemplar(LabeledExample{std::move(request.features), "OK"});
    return;
  }
  {
    std::lock_guard lock(mutex_);
    ++stats_.triggered;
  }
  buffer_.push(std::move(request));
  const auto batch_size = static_cast<std::size_t>(std::max(config_.batch_size, 1));
  if (buffer_.size() >= batch_size) {
    dispatch(Job{buffer_.take(batch_size), templates_.resolve(options_.task), buffer_.exemplars()});
  }
}

void GenAiAgent::dispatch(Job job)
{
  std::optional<Job> evicted;
  {
    std::lock_guard lock(mutex_);
    jobs_.push_back(std::move(job));
    if (jobs_.size() > options_.max_backlog) {
      evicted = std::move(jobs_.front());
      jobs_.pop_front();
    }
  }
  cv_.notify_all();
  if (evicted) {
    for (const auto& request : evicted->batch) {
      Explanation explanation;
      explanation.row_id = request.row_id;
      explanation.text = "unavailable: backlog full";
      explanation.error = Errc::Timeout;
      publish(explanation);
    }
  }
}

void GenAiAgent::worker_loop()
{
  while (true) {
    Job job;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return stopping_ || !jobs_.empty(); });
      if (stopping_) {
        return;
      }
      job = std::move(jobs_.front());
      jobs_.pop_front();
      ++running_;
    }
    try {
      run_job(job);
    } catch (const std::exception& e) {
      log()->error("genai: job failed: {}", e.what());
    }
    {
      std::lock_guard lock(mutex_);
      --running_;
    }
    cv_.notify_all();
  }
}

void GenAiAgent::run_job(const Job& job)
{
  nlohmann::json payload;
  try {
    payload = build_prompt(*job.tmpl, job.batch, job.exemplars, config_.few_shot_k);
  } catch (const Error& e) {
    for (const auto& request : job.batch) {
      Explanation failed;
      failed.row_id = request.row_id;
      failed.error = e.code();
      failed.text = "unavailable: " + unavailable_reason(e.code());
      publish(failed);
    }
    return;
  }
  {
    std::lock_guard lock(mutex_);
    ++stats_.llm_calls;
  }
  const Explanation reply = request_explanation(*client_, payload, job.batch.front().row_id);
  if (reply.error) {
    std::lock_guard lock(mutex_);
    ++stats_.failures;
  }

  std::vector<std::string> labels;
  if (!reply.error && options_.format == ResponseFormat::StructuredTags) {
    labels = parse_tagged_labels(reply.text);
  }
  for (std::size_t i = 0; i < job.batch.size(); ++i) {
    Explanation explanation = reply;
    explanation.row_id = job.batch[i].row_id;
    // Positional mapping; with fewer labels than instances the rest keep the
    // full reply text.
    if (i < labels.size() && !labels[i].empty()) {
      explanation.text = labels[i];
    }
    publish(explanation);
  }
}

void GenAiAgent::publish(const Explanation& explanation)
{
  ExplanationMessage message{explanation.row_id, explanation.text, explanation.model_name,
                             explanation.flags_recalibration};
  session_->publish(topics_.explanation, encode_explanation(message));
  std::lock_guard lock(mutex_);
  ++stats_.published;
}

}  // namespace edgeai
