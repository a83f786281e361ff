#include "edgeai/genai.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "edgeai/logging.hpp"

namespace edgeai {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(TaskType task) noexcept
{
  return task == TaskType::ExplainPrediction ? "ExplainPrediction" : "AssistLabeling";
}

std::string_view to_string(ResponseFormat format) noexcept
{
  return format == ResponseFormat::PlainText ? "PlainText" : "StructuredTags";
}

std::optional<TaskType> task_type_from_string(std::string_view text) noexcept
{
  if (text == "ExplainPrediction" || text == "explain") {
    return TaskType::ExplainPrediction;
  }
  if (text == "AssistLabeling" || text == "label") {
    return TaskType::AssistLabeling;
  }
  return std::nullopt;
}

std::optional<ResponseFormat> response_format_from_string(std::string_view text) noexcept
{
  if (text == "PlainText" || text == "plain") {
    return ResponseFormat::PlainText;
  }
  if (text == "StructuredTags" || text == "tags") {
    return ResponseFormat::StructuredTags;
  }
  return std::nullopt;
}

const std::vector<std::string>& allowed_placeholders()
{
  static const std::vector<std::string> names{"features", "predicted", "expected",
                                              "confidence", "instructions", "exemplars"};
  return names;
}

namespace {

bool is_allowed(std::string_view name)
{
  const auto& names = allowed_placeholders();
  return std::find(names.begin(), names.end(), name) != names.end();
}

// Returns the placeholder names; sets `unterminated` when a `{{` never closes.
std::vector<std::string> scan_placeholders(std::string_view body, bool& unterminated)
{
  std::vector<std::string> out;
  unterminated = false;
  std::size_t pos = 0;
  while ((pos = body.find("{{", pos)) != std::string_view::npos) {
    const std::size_t end = body.find("}}", pos + 2);
    if (end == std::string_view::npos) {
      unterminated = true;
      break;
    }
    out.emplace_back(body.substr(pos + 2, end - pos - 2));
    pos = end + 2;
  }
  return out;
}

void replace_all(std::string& text, std::string_view from, std::string_view to)
{
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::string render_features(const NamedValues& features)
{
  std::string out;
  for (const auto& [name, value] : features) {
    if (!out.empty()) {
      out += ", ";
    }
    out += name + "=" + format_number(value);
  }
  return out;
}

}  // namespace

std::vector<std::string> placeholders_in(std::string_view body)
{
  bool unterminated = false;
  return scan_placeholders(body, unterminated);
}

PromptTemplate parse_template(std::string name, std::string body, fs::path loaded_from)
{
  const std::string subject = loaded_from.empty() ? name : loaded_from.string();
  if (body.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw Error(Errc::TemplateParseError, subject, "template '" + name + "' is empty");
  }
  bool unterminated = false;
  for (const auto& placeholder : scan_placeholders(body, unterminated)) {
    if (!is_allowed(placeholder)) {
      throw Error(Errc::TemplateParseError, subject,
                  "template '" + name + "' uses unknown placeholder {{" + placeholder + "}}");
    }
  }
  if (unterminated) {
    throw Error(Errc::TemplateParseError, subject, "template '" + name + "' has an unclosed {{");
  }
  return PromptTemplate{std::move(name), std::move(body), std::move(loaded_from),
                        std::chrono::system_clock::now()};
}

const PromptTemplate& default_template(TaskType task)
{
  static const PromptTemplate explain = parse_template(
      std::string(kExplainTemplate),
      "A process model predicted {{predicted}} where the expected value was {{expected}} "
      "(confidence {{confidence}}).\nSensor readings: {{features}}.\n{{instructions}}\n"
      "{{exemplars}}\nGive a short, concrete explanation of the most likely cause of the deviation.");
  static const PromptTemplate label = parse_template(
      std::string(kLabelTemplate),
      "Label each query instance as OK or NonOK.\n{{instructions}}\n{{exemplars}}\n"
      "Answer with one <label>...</label> per query instance, in the order given.");
  return task == TaskType::ExplainPrediction ? explain : label;
}

std::string format_number(double value)
{
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  if (ec != std::errc()) {
    return "nan";
  }
  return std::string(buffer, ptr);
}

bool should_trigger(double predicted, double expected, const DeviationPolicy& policy) noexcept
{
  return deviation_exceeds(predicted, expected, policy);
}

json build_prompt(const PromptTemplate& tmpl, const std::vector<ExplanationRequest>& batch,
                  const std::vector<LabeledExample>& exemplars, int few_shot_k)
{
  if (batch.empty()) {
    throw Error(Errc::ValidationError, "batch", "prompt needs at least one request");
  }
  bool unterminated = false;
  for (const auto& placeholder : scan_placeholders(tmpl.body, unterminated)) {
    if (!is_allowed(placeholder)) {
      throw Error(Errc::UnboundPlaceholder, placeholder,
                  "placeholder {{" + placeholder + "}} is not bound");
    }
  }
  const ExplanationRequest& first = batch.front();

  std::string exemplar_text;
  const std::size_t k =
      std::min(static_cast<std::size_t>(std::max(few_shot_k, 0)), exemplars.size());
  for (std::size_t i = 0; i < k; ++i) {
    exemplar_text += "Example " + std::to_string(i + 1) + ": " +
                     render_features(exemplars[i].features) + " -> <label>" + exemplars[i].label +
                     "</label>\n";
  }
  if (first.task_type == TaskType::AssistLabeling) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      exemplar_text += "Instance " + std::to_string(i + 1) + ": " +
                       render_features(batch[i].features) +
                       " (predicted " + format_number(batch[i].predicted) + ")\n";
    }
  }
  if (!exemplar_text.empty() && exemplar_text.back() == '\n') {
    exemplar_text.pop_back();
  }

  std::string prompt = tmpl.body;
  replace_all(prompt, "{{features}}", render_features(first.features));
  replace_all(prompt, "{{predicted}}", format_number(first.predicted));
  replace_all(prompt, "{{expected}}", format_number(first.expected));
  replace_all(prompt, "{{confidence}}", format_number(first.confidence));
  replace_all(prompt, "{{instructions}}", first.domain_instructions.value_or(""));
  replace_all(prompt, "{{exemplars}}", exemplar_text);

  return json{{"prompt", prompt},
              {"metadata",
               {{"task_type", to_string(first.task_type)},
                {"response_format", to_string(first.response_format)},
                {"domain_instructions", first.domain_instructions
                                            ? json(*first.domain_instructions)
                                            : json(nullptr)}}}};
}

json build_prompt(const PromptTemplate& tmpl, const ExplanationRequest& request,
                  const std::vector<LabeledExample>& exemplars, int few_shot_k)
{
  return build_prompt(tmpl, std::vector<ExplanationRequest>{request}, exemplars, few_shot_k);
}

std::vector<std::string> parse_tagged_labels(std::string_view text)
{
  constexpr std::string_view open = "<label>";
  constexpr std::string_view close = "</label>";
  std::vector<std::string> labels;
  std::size_t pos = 0;
  while ((pos = text.find(open, pos)) != std::string_view::npos) {
    const std::size_t start = pos + open.size();
    const std::size_t end = text.find(close, start);
    if (end == std::string_view::npos) {
      break;
    }
    labels.emplace_back(text.substr(start, end - start));
    pos = end + close.size();
  }
  return labels;
}

std::vector<PromptTemplate> reload_templates(const fs::path& dir)
{
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) {
    throw Error(Errc::FileNotFound, dir.string(), "template directory " + dir.string() + " not found");
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && !name.empty() && name.front() != '.') {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<PromptTemplate> out;
  for (const auto& file : files) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
      throw Error(Errc::TemplateParseError, file.string(), "cannot read " + file.string());
    }
    std::ostringstream body;
    body << in.rdbuf();
    out.push_back(parse_template(file.stem().string(), body.str(), file));
  }
  return out;
}

TemplateStore::TemplateStore(fs::path dir)
    : dir_(std::move(dir)), set_(std::make_shared<const Set>())
{
}

std::string TemplateStore::fingerprint() const
{
  std::error_code ec;
  if (dir_.empty() || !fs::is_directory(dir_, ec)) {
    return {};
  }
  std::vector<std::string> parts;
  for (const auto& entry : fs::directory_iterator(dir_, ec)) {
    std::error_code mtime_ec;
    const auto mtime = fs::last_write_time(entry.path(), mtime_ec).time_since_epoch().count();
    const auto size = entry.is_regular_file() ? fs::file_size(entry.path(), mtime_ec) : 0;
    parts.push_back(entry.path().filename().string() + ":" + std::to_string(mtime) + ":" +
                    std::to_string(size));
  }
  std::sort(parts.begin(), parts.end());
  std::string out;
  for (const auto& part : parts) {
    out += part + ";";
  }
  return out;
}

bool TemplateStore::reload(std::string* error)
{
  const std::string print = fingerprint();
  try {
    auto loaded = reload_templates(dir_);
    auto next = std::make_shared<Set>();
    for (auto& tmpl : loaded) {
      auto name = tmpl.name;
      (*next)[name] = std::make_shared<const PromptTemplate>(std::move(tmpl));
    }
    if (next->empty()) {
      log()->warn("genai: no templates in {}, using built-in defaults", dir_.string());
    }
    std::lock_guard lock(mutex_);
    set_ = std::move(next);
    fingerprint_ = print;
    return true;
  } catch (const Error& e) {
    log()->error("genai: template reload failed, keeping previous set: {}", e.what());
    if (error != nullptr) {
      *error = e.what();
    }
    std::lock_guard lock(mutex_);
    // Do not retry the same broken state on every poll.
    fingerprint_ = print;
    return false;
  }
}

bool TemplateStore::poll()
{
  const std::string print = fingerprint();
  {
    std::lock_guard lock(mutex_);
    if (print == fingerprint_) {
      return false;
    }
  }
  return reload();
}

std::shared_ptr<const TemplateStore::Set> TemplateStore::snapshot() const
{
  std::lock_guard lock(mutex_);
  return set_;
}

std::shared_ptr<const PromptTemplate> TemplateStore::resolve(TaskType task) const
{
  const auto set = snapshot();
  const std::string_view name =
      task == TaskType::ExplainPrediction ? kExplainTemplate : kLabelTemplate;
  if (auto it = set->find(name); it != set->end()) {
    return it->second;
  }
  return std::shared_ptr<const PromptTemplate>(std::shared_ptr<const PromptTemplate>{},
                                               &default_template(task));
}

std::string unavailable_reason(Errc code)
{
  switch (code) {
    case Errc::Timeout: return "timeout";
    case Errc::HttpError: return "http error";
    case Errc::MalformedResponse: return "malformed response";
    case Errc::MissingApiKey: return "missing api key";
    default: return std::string(to_string(code));
  }
}

Explanation request_explanation(LlmClient& client, const json& payload, std::int64_t row_id)
{
  Explanation explanation;
  explanation.row_id = row_id;
  try {
    LlmReply reply = client.complete(payload);
    explanation.text = std::move(reply.text);
    explanation.model_name = std::move(reply.model_name);
    explanation.flags_recalibration = true;
  } catch (const Error& e) {
    explanation.error = e.code();
    explanation.text = "unavailable: " + unavailable_reason(e.code());
    log()->warn("genai: explanation for row {} failed: {}", row_id, e.what());
  } catch (const std::exception& e) {
    explanation.error = Errc::HttpError;
    explanation.text = "unavailable: " + unavailable_reason(Errc::HttpError);
    log()->warn("genai: explanation for row {} failed: {}", row_id, e.what());
  }
  explanation.received_at = std::chrono::system_clock::now();
  return explanation;
}

LabelingBuffer::LabelingBuffer(std::size_t capacity) : capacity_(std::max<std::size_t>(capacity, 1))
{
}

void LabelingBuffer::push(ExplanationRequest entry)
{
  std::lock_guard lock(mutex_);
  entries_.push_back(std::move(entry));
  while (entries_.size() > capacity_) {
    entries_.pop_front();
  }
}

void LabelingBuffer::add_exemplar(LabeledExample example)
{
  std::lock_guard lock(mutex_);
  exemplars_.push_back(std::move(example));
  while (exemplars_.size() > capacity_) {
    exemplars_.pop_front();
  }
}

std::vector<ExplanationRequest> LabelingBuffer::take(std::size_t n)
{
  std::lock_guard lock(mutex_);
  std::vector<ExplanationRequest> out;
  while (!entries_.empty() && out.size() < n) {
    out.push_back(std::move(entries_.front()));
    entries_.pop_front();
  }
  return out;
}

std::size_t LabelingBuffer::size() const
{
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::vector<ExplanationRequest> LabelingBuffer::entries() const
{
  std::lock_guard lock(mutex_);
  return {entries_.begin(), entries_.end()};
}

std::vector<LabeledExample> LabelingBuffer::exemplars() const
{
  std::lock_guard lock(mutex_);
  return {exemplars_.begin(), exemplars_.end()};
}

}  // namespace edgeai
