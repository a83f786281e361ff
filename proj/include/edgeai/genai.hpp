#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "edgeai/config.hpp"
#include "edgeai/errors.hpp"

namespace edgeai {

enum class TaskType { ExplainPrediction, AssistLabeling };
enum class ResponseFormat { PlainText, StructuredTags };

[[nodiscard]] std::string_view to_string(TaskType task) noexcept;
[[nodiscard]] std::string_view to_string(ResponseFormat format) noexcept;
[[nodiscard]] std::optional<TaskType> task_type_from_string(std::string_view text) noexcept;
[[nodiscard]] std::optional<ResponseFormat> response_format_from_string(std::string_view text) noexcept;

using NamedValues = std::vector<std::pair<std::string, double>>;

struct ExplanationRequest {
  std::int64_t row_id = 0;
  NamedValues features;
  double predicted = 0.0;
  double expected = 0.0;
  double confidence = 1.0;
  TaskType task_type = TaskType::ExplainPrediction;
  ResponseFormat response_format = ResponseFormat::PlainText;
  std::optional<std::string> domain_instructions;
};

// A labeled row used as a few-shot exemplar.
struct LabeledExample {
  NamedValues features;
  std::string label;
};

struct PromptTemplate {
  std::string name;
  std::string body;
  std::filesystem::path loaded_from;
  std::chrono::system_clock::time_point loaded_at{};
};

inline constexpr std::string_view kExplainTemplate = "explain";
inline constexpr std::string_view kLabelTemplate = "label";

// Placeholders allowed in template bodies, without braces.
[[nodiscard]] const std::vector<std::string>& allowed_placeholders();
// Every `{{name}}` in the body, in order of appearance.
[[nodiscard]] std::vector<std::string> placeholders_in(std::string_view body);
// Throws TemplateParseError for an empty body, an unterminated `{{`, or a
// placeholder outside the allowed set.
[[nodiscard]] PromptTemplate parse_template(std::string name, std::string body,
                                            std::filesystem::path loaded_from = {});
[[nodiscard]] const PromptTemplate& default_template(TaskType task);

// Shortest decimal that round-trips to the same double.
[[nodiscard]] std::string format_number(double value);

// Deviation rule shared with OK/Non-OK classification.
[[nodiscard]] bool should_trigger(double predicted, double expected,
                                  const DeviationPolicy& policy) noexcept;

// {prompt, metadata:{task_type, response_format, domain_instructions}}.
// {{features}}, {{predicted}}, {{expected}} and {{confidence}} refer to the
// first request. {{exemplars}} expands to the first min(few_shot_k,
// |exemplars|) examples, followed for AssistLabeling by every request in the
// batch as query instances. Throws UnboundPlaceholder.
[[nodiscard]] nlohmann::json build_prompt(const PromptTemplate& tmpl,
                                          const std::vector<ExplanationRequest>& batch,
                                          const std::vector<LabeledExample>& exemplars,
                                          int few_shot_k);
[[nodiscard]] nlohmann::json build_prompt(const PromptTemplate& tmpl,
                                          const ExplanationRequest& request,
                                          const std::vector<LabeledExample>& exemplars,
                                          int few_shot_k);

// Contents of each <label>...</label> segment, in order.
[[nodiscard]] std::vector<std::string> parse_tagged_labels(std::string_view text);

// Reads every regular file in `dir`; the name is the file stem. Throws
// TemplateParseError naming the first bad file, or FileNotFound.
[[nodiscard]] std::vector<PromptTemplate> reload_templates(const std::filesystem::path& dir);

// Active template set. A reload replaces the whole set or nothing; readers
// keep the snapshot they took.
class TemplateStore {
 public:
  using Set = std::map<std::string, std::shared_ptr<const PromptTemplate>, std::less<>>;

  explicit TemplateStore(std::filesystem::path dir = {});

  // Returns false and keeps the previous set when the reload fails.
  bool reload(std::string* error = nullptr);
  // Reloads when a file was added, removed or modified since the last load.
  bool poll();
  [[nodiscard]] std::shared_ptr<const Set> snapshot() const;
  // Named template, else the built-in default for the task.
  [[nodiscard]] std::shared_ptr<const PromptTemplate> resolve(TaskType task) const;
  [[nodiscard]] const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  [[nodiscard]] std::string fingerprint() const;

  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  std::shared_ptr<const Set> set_;
  std::string fingerprint_;
};

struct Explanation {
  std::int64_t row_id = 0;
  std::string text;
  std::string model_name;
  std::chrono::system_clock::time_point received_at{};
  bool flags_recalibration = false;
  // Set when the request failed; text is then "unavailable: <reason>".
  std::optional<Errc> error;
};

struct LlmReply {
  std::string text;
  std::string model_name;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  // Throws Error(Timeout | HttpError | MalformedResponse | MissingApiKey).
  virtual LlmReply complete(const nlohmann::json& payload) = 0;
};

inline constexpr std::string_view kDefaultLlmModel = "gpt-4o";

// Chat-completion style POST: {model, messages:[{role:"user", content}], metadata}.
class HttpLlmClient final : public LlmClient {
 public:
  explicit HttpLlmClient(GenAiConfig config, std::string model = std::string(kDefaultLlmModel));
  LlmReply complete(const nlohmann::json& payload) override;

 private:
  GenAiConfig config_;
  std::string model_;
};

// Never throws; failures become "unavailable: <reason>".
[[nodiscard]] Explanation request_explanation(LlmClient& client, const nlohmann::json& payload,
                                              std::int64_t row_id);

// Short reason used in "unavailable: <reason>".
[[nodiscard]] std::string unavailable_reason(Errc code);

// Bounded FIFO of rows awaiting labels plus labeled exemplars.
class LabelingBuffer {
 public:
  static constexpr std::size_t kDefaultCapacity = 256;

  explicit LabelingBuffer(std::size_t capacity = kDefaultCapacity);

  void push(ExplanationRequest entry);
  void add_exemplar(LabeledExample example);
  // Removes and returns up to n of the oldest entries.
  [[nodiscard]] std::vector<ExplanationRequest> take(std::size_t n);
  [[nodiscard]] std::size_t size() const;
  [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
  [[nodiscard]] std::vector<ExplanationRequest> entries() const;
  [[nodiscard]] std::vector<LabeledExample> exemplars() const;

 private:
  mutable std::mutex mutex_;
  std::size_t capacity_;
  std::deque<ExplanationRequest> entries_;
  std::deque<LabeledExample> exemplars_;
};

}  // namespace edgeai
