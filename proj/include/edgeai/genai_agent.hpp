#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "edgeai/bus.hpp"
#include "edgeai/genai.hpp"

namespace edgeai {

struct GenAiAgentOptions {
  TaskType task = TaskType::ExplainPrediction;
  ResponseFormat format = ResponseFormat::PlainText;
  std::optional<std::string> instructions;
  std::size_t buffer_capacity = LabelingBuffer::kDefaultCapacity;
  std::size_t max_in_flight = 4;
  // Jobs waiting for a free worker; beyond this the oldest is answered
  // "unavailable: backlog full".
  std::size_t max_backlog = 1024;
  std::chrono::milliseconds template_poll{1000};
};

struct GenAiStats {
  std::uint64_t rows_seen = 0;
  std::uint64_t triggered = 0;
  std::uint64_t llm_calls = 0;
  std::uint64_t failures = 0;
  std::uint64_t published = 0;
};

// Watches the output topic. Explain mode asks the LLM about every NonOK row;
// labeling mode batches NonOK and unlabeled rows and maps the returned labels
// back by position. Explanations go to the explanation topic.
class GenAiAgent {
 public:
  GenAiAgent(BusPtr session, TopicSet topics, GenAiConfig config, DeviationPolicy policy,
             FeatureSchema schema, std::shared_ptr<LlmClient> client,
             GenAiAgentOptions options = {});
  ~GenAiAgent();
  GenAiAgent(const GenAiAgent&) = delete;
  GenAiAgent& operator=(const GenAiAgent&) = delete;

  void start();
  void stop();

  [[nodiscard]] GenAiStats stats() const;
  [[nodiscard]] LabelingBuffer& buffer() noexcept { return buffer_; }
  [[nodiscard]] TemplateStore& templates() noexcept { return templates_; }
  // True once every observed row has been handled and no LLM call is running.
  bool wait_idle(std::chrono::milliseconds timeout);

 private:
  struct Job {
    std::vector<ExplanationRequest> batch;
    std::shared_ptr<const PromptTemplate> tmpl;
    std::vector<LabeledExample> exemplars;
  };

  void monitor_loop();
  void worker_loop();
  void handle_result(const std::string& payload);
  void dispatch(Job job);
  void run_job(const Job& job);
  void publish(const Explanation& explanation);

  BusPtr session_;
  TopicSet topics_;
  GenAiConfig config_;
  DeviationPolicy policy_;
  FeatureSchema schema_;
  std::shared_ptr<LlmClient> client_;
  GenAiAgentOptions options_;
  LabelingBuffer buffer_;
  TemplateStore templates_;

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::string> inbox_;
  std::deque<Job> jobs_;
  std::size_t running_ = 0;
  bool monitor_busy_ = false;
  bool stopping_ = false;
  GenAiStats stats_;
  SubscriptionHandle subscription_;
  std::thread monitor_;
  std::vector<std::thread> workers_;
};

}  // namespace edgeai
