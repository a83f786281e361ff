#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <mutex>

#include "edgeai/errors.hpp"
#include "edgeai/genai.hpp"
#include "edgeai/genai_agent.hpp"
#include "edgeai/messages.hpp"
#include "edgeai/prediction.hpp"
#include "support/fixtures.hpp"
#include "support/mock_llm_server.hpp"
#include "support/oracles.hpp"

namespace edgeai {
namespace {

using namespace std::chrono_literals;
using nlohmann::json;
using testing::thrown_code;

ExplanationRequest sample_request(double predicted = 3.5, double expected = 4.0)
{
  ExplanationRequest r;
  r.row_id = 1;
  r.features = {{"ph", 6.5}, {"temperature", 72.0}};
  r.predicted = predicted;
  r.expected = expected;
  r.confidence = 0.25;
  return r;
}

std::vector<LabeledExample> five_exemplars()
{
  std::vector<LabeledExample> out;
  for (int i = 0; i < 5; ++i) {
    out.push_back({{{"ph", 6.0 + i}}, i % 2 ? "NonOK" : "OK"});
  }
  return out;
}

std::size_t count_of(const std::string& text, const std::string& needle)
{
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) {
    ++n;
  }
  return n;
}

TEST(Trigger, Examples)
{
  EXPECT_TRUE(should_trigger(10.0, 12.0, {DeviationMode::Absolute, 1.5}));
  EXPECT_FALSE(should_trigger(7.0, 7.0, {DeviationMode::Absolute, 0.0}));
  EXPECT_FALSE(should_trigger(7.0, 7.0, {DeviationMode::Percentage, 0.0}));
  EXPECT_TRUE(should_trigger(90.0, 100.0, {DeviationMode::Percentage, 0.05}));
}

TEST(Trigger, EquivalentToClassifyOnGrid)
{
  for (const auto mode : {DeviationMode::Absolute, DeviationMode::Percentage}) {
    const DeviationPolicy policy{mode, mode == DeviationMode::Absolute ? 0.5 : 0.1};
    for (int i = -60; i <= 60; ++i) {
      for (int j = -60; j <= 60; ++j) {
        Prediction p;
        p.predicted = i * 0.1;
        const double target = j * 0.1;
        ASSERT_EQ(should_trigger(p.predicted, target, policy),
                  classify(p, target, policy) == StatusFlag::NonOK)
            << i << "," << j;
      }
    }
  }
}

TEST(Template, PlaceholderScan)
{
  EXPECT_EQ(placeholders_in("a {{features}} b {{x}} {{predicted}}"),
            (std::vector<std::string>{"features", "x", "predicted"}));
  EXPECT_EQ(thrown_code([] { (void)parse_template("t", "hi {{nope}}"); }), Errc::TemplateParseError);
  EXPECT_EQ(thrown_code([] { (void)parse_template("t", "hi {{features"); }), Errc::TemplateParseError);
  EXPECT_EQ(thrown_code([] { (void)parse_template("t", "  \n"); }), Errc::TemplateParseError);
  EXPECT_NO_THROW((void)parse_template("t", "{{instructions}} {{exemplars}} {{confidence}}"));
}

TEST(Template, DefaultsParse)
{
  for (const auto task : {TaskType::ExplainPrediction, TaskType::AssistLabeling}) {
    const auto& t = default_template(task);
    EXPECT_FALSE(t.body.empty());
    EXPECT_NO_THROW((void)parse_template(t.name, t.body));
  }
}

TEST(Prompt, SubstitutesShortestNumbers)
{
  const PromptTemplate t = parse_template("t", "Pred {{predicted}} vs {{expected}}");
  const json payload = build_prompt(t, sample_request(), {}, 0);
  EXPECT_EQ(payload.at("prompt"), "Pred 3.5 vs 4");
  EXPECT_EQ(payload.at("metadata").at("task_type"), "ExplainPrediction");
  EXPECT_EQ(payload.at("metadata").at("response_format"), "PlainText");
  EXPECT_TRUE(payload.at("metadata").at("domain_instructions").is_null());
}

TEST(Prompt, FeaturesConfidenceInstructions)
{
  ExplanationRequest r = sample_request();
  r.domain_instructions = "Focus on pH.";
  const PromptTemplate t = parse_template("t", "[{{features}}] c={{confidence}} {{instructions}}");
  const json payload = build_prompt(t, r, {}, 0);
  EXPECT_EQ(payload.at("prompt"), "[ph=6.5, temperature=72] c=0.25 Focus on pH.");
  EXPECT_EQ(payload.at("metadata").at("domain_instructions"), "Focus on pH.");
}

TEST(Prompt, ZeroShotHasNoExemplars)
{
  ExplanationRequest r = sample_request();
  r.task_type = TaskType::AssistLabeling;
  const PromptTemplate t = parse_template("t", "{{exemplars}}");
  const std::string prompt = build_prompt(t, r, five_exemplars(), 0).at("prompt");
  EXPECT_EQ(count_of(prompt, "Example "), 0u);
  EXPECT_EQ(count_of(prompt, "Instance "), 1u);
}

TEST(Prompt, FewShotTakesFirstKInOrder)
{
  ExplanationRequest r = sample_request();
  r.task_type = TaskType::AssistLabeling;
  const PromptTemplate t = parse_template("t", "{{exemplars}}");
  const std::string prompt = build_prompt(t, r, five_exemplars(), 2).at("prompt");
  EXPECT_EQ(count_of(prompt, "Example "), 2u);
  const auto first = prompt.find("ph=6 ");
  const auto second = prompt.find("ph=7 ");
  ASSERT_NE(first, std::string::npos);
  ASSERT_NE(second, std::string::npos);
  EXPECT_LT(first, second);
  EXPECT_EQ(prompt.find("ph=8 "), std::string::npos);
  EXPECT_LT(second, prompt.find("Instance 1"));
  EXPECT_EQ(count_of(build_prompt(t, r, five_exemplars(), 50).at("prompt"), "Example "), 5u);
}

TEST(Prompt, BatchCarriesEveryInstance)
{
  std::vector<ExplanationRequest> batch;
  for (int i = 0; i < 5; ++i) {
    ExplanationRequest r = sample_request(i, i);
    r.task_type = TaskType::AssistLabeling;
    batch.push_back(r);
  }
  const std::string prompt =
      build_prompt(default_template(TaskType::AssistLabeling), batch, {}, 0).at("prompt");
  EXPECT_EQ(count_of(prompt, "Instance "), 5u);
}

TEST(Prompt, UnboundPlaceholder)
{
  PromptTemplate raw{"t", "hi {{secret}}", {}, {}};
  EXPECT_EQ(thrown_code([&] { (void)build_prompt(raw, sample_request(), {}, 0); }),
            Errc::UnboundPlaceholder);
}

TEST(NumberFormat, ShortestRoundTrip)
{
  EXPECT_EQ(format_number(4.0), "4");
  EXPECT_EQ(format_number(3.5), "3.5");
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(-2.25), "-2.25");
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double v = std::uniform_real_distribution<double>(-1e6, 1e6)(rng);
    EXPECT_EQ(std::stod(format_number(v)), v);
  }
}

TEST(Labels, ParseTags)
{
  EXPECT_EQ(parse_tagged_labels("<label>OK</label> and <label>NonOK</label>"),
            (std::vector<std::string>{"OK", "NonOK"}));
  EXPECT_TRUE(parse_tagged_labels("plain text").empty());
  EXPECT_EQ(parse_tagged_labels("<label>a</label><label>unterminated"),
            std::vector<std::string>{"a"});
}

TEST(LabelingBuffer, BoundedFifo)
{
  LabelingBuffer buffer(8);
  for (int i = 0; i < 8 + 3; ++i) {
    ExplanationRequest r;
    r.row_id = i;
    buffer.push(r);
  }
  EXPECT_EQ(buffer.size(), 8u);
  const auto entries = buffer.entries();
  EXPECT_EQ(entries.front().row_id, 3);
  EXPECT_EQ(entries.back().row_id, 10);
  const auto taken = buffer.take(5);
  ASSERT_EQ(taken.size(), 5u);
  EXPECT_EQ(taken[0].row_id, 3);
  EXPECT_EQ(buffer.size(), 3u);
  EXPECT_EQ(LabelingBuffer().capacity(), 256u);
}

void write_file(const std::filesystem::path& path, const std::string& text)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

TEST(TemplateStore, ReloadReplacesWholeSet)
{
  testing::TempDir dir;
  write_file(dir / "explain", "v1 {{features}}");
  write_file(dir / "label", "label {{exemplars}}");
  TemplateStore store(dir.path());
  ASSERT_TRUE(store.reload());
  EXPECT_EQ(store.resolve(TaskType::ExplainPrediction)->body, "v1 {{features}}");
  const auto before = store.snapshot();

  write_file(dir / "explain", "v2 {{features}}");
  ASSERT_TRUE(store.reload());
  EXPECT_EQ(store.resolve(TaskType::ExplainPrediction)->body, "v2 {{features}}");
  // A snapshot taken earlier is untouched.
  EXPECT_EQ(before->at("explain")->body, "v1 {{features}}");
}

TEST(TemplateStore, FailedReloadKeepsPreviousSet)
{
  testing::TempDir dir;
  write_file(dir / "explain", "good {{features}}");
  write_file(dir / "label", "label {{exemplars}}");
  TemplateStore store(dir.path());
  ASSERT_TRUE(store.reload());
  const auto before = store.snapshot();

  write_file(dir / "explain", "changed {{features}}");
  write_file(dir / "label", "bad {{oops}}");
  std::string error;
  EXPECT_FALSE(store.reload(&error));
  EXPECT_NE(error.find("label"), std::string::npos);
  const auto after = store.snapshot();
  EXPECT_EQ(after, before);
  EXPECT_EQ(after->at("explain")->body, "good {{features}}");
  EXPECT_EQ(after->at("label")->body, "label {{exemplars}}");
}

TEST(TemplateStore, EmptyDirectoryFallsBackToDefaults)
{
  testing::TempDir dir;
  TemplateStore store(dir.path());
  ASSERT_TRUE(store.reload());
  EXPECT_TRUE(store.snapshot()->empty());
  EXPECT_EQ(store.resolve(TaskType::ExplainPrediction)->body,
            default_template(TaskType::ExplainPrediction).body);
  EXPECT_EQ(thrown_code([&] { (void)reload_templates(dir / "missing"); }), Errc::FileNotFound);
}

TEST(TemplateStore, PollNoticesEdits)
{
  testing::TempDir dir;
  write_file(dir / "explain", "one {{features}}");
  TemplateStore store(dir.path());
  ASSERT_TRUE(store.reload());
  EXPECT_FALSE(store.poll());
  write_file(dir / "explain", "second {{features}}");
  EXPECT_TRUE(store.poll());
  EXPECT_EQ(store.resolve(TaskType::ExplainPrediction)->body, "second {{features}}");
}

class LlmClientTest : public ::testing::Test {
 protected:
  void SetUp() override { ::setenv("EDGEAI_TEST_KEY", "sk-test", 1); }
  void TearDown() override { ::unsetenv("EDGEAI_TEST_KEY"); }

  GenAiConfig config_for(const testing::MockLlmServer& server, int timeout_ms = 2000)
  {
    GenAiConfig config;
    config.endpoint_url = server.url();
    config.api_key_env_var = "EDGEAI_TEST_KEY";
    config.request_timeout_ms = timeout_ms;
    return config;
  }
};

TEST_F(LlmClientTest, EchoReply)
{
  testing::MockLlmBehavior echo;
  echo.reply = "high pH deviation";
  testing::MockLlmServer server(echo);
  HttpLlmClient client(config_for(server));
  const json payload = build_prompt(parse_template("t", "why {{features}}"), sample_request(), {}, 0);
  const Explanation e = request_explanation(client, payload, 42);
  EXPECT_EQ(e.text, "high pH deviation");
  EXPECT_EQ(e.row_id, 42);
  EXPECT_TRUE(e.flags_recalibration);
  EXPECT_FALSE(e.error);
  EXPECT_EQ(e.model_name, "mock-llm");
  ASSERT_EQ(server.request_count(), 1u);
  const json request = server.requests()[0];
  EXPECT_EQ(request.at("messages").at(0).at("role"), "user");
  EXPECT_EQ(request.at("messages").at(0).at("content"), "why ph=6.5, temperature=72");
  EXPECT_EQ(request.at("model"), "gpt-4o");
  EXPECT_EQ(server.auth_headers()[0], "Bearer sk-test");
}

TEST_F(LlmClientTest, TimeoutBecomesUnavailable)
{
  testing::MockLlmBehavior slow;
  slow.delay = 3s;
  testing::MockLlmServer server(slow);
  HttpLlmClient client(config_for(server, 300));
  const auto start = std::chrono::steady_clock::now();
  const Explanation e = request_explanation(client, json{{"prompt", "x"}}, 1);
  EXPECT_LT(std::chrono::steady_clock::now() - start, 2s);
  EXPECT_EQ(e.error, Errc::Timeout);
  EXPECT_EQ(e.text, "unavailable: timeout");
  EXPECT_FALSE(e.flags_recalibration);
  server.stop();
}

TEST_F(LlmClientTest, NonJsonIsMalformed)
{
  testing::MockLlmBehavior bad;
  bad.malformed = true;
  testing::MockLlmServer server(bad);
  HttpLlmClient client(config_for(server));
  EXPECT_EQ(thrown_code([&] { (void)client.complete(json{{"prompt", "x"}}); }),
            Errc::MalformedResponse);
  EXPECT_EQ(request_explanation(client, json{{"prompt", "x"}}, 1).text,
            "unavailable: malformed response");
}

TEST_F(LlmClientTest, HttpStatusAndMissingKey)
{
  testing::MockLlmBehavior failing;
  failing.status = 503;
  testing::MockLlmServer server(failing);
  HttpLlmClient client(config_for(server));
  const auto e = testing::thrown_error([&] { (void)client.complete(json{{"prompt", "x"}}); });
  ASSERT_TRUE(e);
  EXPECT_EQ(e->code(), Errc::HttpError);
  EXPECT_EQ(e->subject(), "503");

  ::unsetenv("EDGEAI_TEST_KEY");
  EXPECT_EQ(thrown_code([&] { (void)client.complete(json{{"prompt", "x"}}); }), Errc::MissingApiKey);
  EXPECT_EQ(server.request_count(), 1u);
}

TEST_F(LlmClientTest, UnreachableEndpoint)
{
  int dead_port = 0;
  {
    testing::MockLlmServer probe;
    dead_port = probe.port();
  }
  GenAiConfig config;
  config.endpoint_url = "http://127.0.0.1:" + std::to_string(dead_port) + "/v1/chat/completions";
  config.api_key_env_var = "EDGEAI_TEST_KEY";
  HttpLlmClient client(config);
  const Explanation e = request_explanation(client, json{{"prompt", "x"}}, 1);
  EXPECT_EQ(e.error, Errc::HttpError);
  EXPECT_EQ(e.text, "unavailable: http error");
}

// In-process client that records every payload.
class RecordingClient final : public LlmClient {
 public:
  explicit RecordingClient(std::string reply = "Explained.") : reply_(std::move(reply)) {}
  LlmReply complete(const json& payload) override
  {
    std::lock_guard lock(mutex_);
    payloads_.push_back(payload);
    return {reply_, "recorder"};
  }
  std::vector<json> payloads() const
  {
    std::lock_guard lock(mutex_);
    return payloads_;
  }

 private:
  mutable std::mutex mutex_;
  std::string reply_;
  std::vector<json> payloads_;
};

class GenAiAgentTest : public ::testing::Test {
 protected:
  void start(std::shared_ptr<LlmClient> client, GenAiAgentOptions options = {}, int batch_size = 1)
  {
    GenAiConfig config;
    config.batch_size = batch_size;
    config.template_dir = "";
    agent = std::make_unique<GenAiAgent>(bus, topics, config, DeviationPolicy{DeviationMode::Absolute, 1.0},
                                         testing::plant_schema(), std::move(client), options);
    sub = bus->subscribe(topics.explanation, [this](const Envelope& e) {
      std::lock_guard lock(mutex);
      explanations.push_back(decode_explanation(e.payload));
    });
    agent->start();
  }
  void send_result(std::int64_t row_id, double predicted, std::optional<double> target)
  {
    ResultMessage r;
    r.row_id = row_id;
    r.observation.values = {20.0, 30.0, 40.0, std::nullopt};
    r.observation.target = target;
    r.prediction.predicted = predicted;
    r.prediction.row_id = row_id;
    r.status = classify(r.prediction, target, {DeviationMode::Absolute, 1.0});
    bus->publish(topics.output, encode_result(r, testing::plant_schema()));
  }
  std::vector<ExplanationMessage> received()
  {
    std::lock_guard lock(mutex);
    return explanations;
  }
  void TearDown() override
  {
    if (agent) {
      agent->stop();
    }
  }

  std::shared_ptr<InMemoryBus> bus = make_inmemory_bus();
  TopicSet topics = derive_topics(testing::plant_config());
  std::unique_ptr<GenAiAgent> agent;
  SubscriptionHandle sub;
  std::mutex mutex;
  std::vector<ExplanationMessage> explanations;
};

TEST_F(GenAiAgentTest, OneNonOkRowOneCall)
{
  auto client = std::make_shared<RecordingClient>();
  start(client);
  send_result(1, 10.0, 10.5);
  send_result(2, 10.0, 15.0);
  send_result(3, 10.0, std::nullopt);
  ASSERT_TRUE(agent->wait_idle(5s));
  EXPECT_EQ(client->payloads().size(), 1u);
  const auto got = received();
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].row_id, 2);
  EXPECT_EQ(got[0].text, "Explained.");
  EXPECT_TRUE(got[0].flags_recalibration);
  const GenAiStats stats = agent->stats();
  EXPECT_EQ(stats.rows_seen, 3u);
  EXPECT_EQ(stats.triggered, 1u);
}

TEST_F(GenAiAgentTest, NoNonOkRowsNoCalls)
{
  auto client = std::make_shared<RecordingClient>();
  start(client);
  for (int i = 0; i < 20; ++i) {
    send_result(i + 1, 5.0, 5.0 + 0.01 * i);
  }
  ASSERT_TRUE(agent->wait_idle(5s));
  EXPECT_EQ(client->payloads().size(), 0u);
  EXPECT_TRUE(received().empty());
}

TEST_F(GenAiAgentTest, LabelingBatchesFiveRowsIntoOneCall)
{
  auto client = std::make_shared<RecordingClient>(
      "<label>OK</label><label>NonOK</label><label>OK</label><label>NonOK</label><label>OK</label>");
  GenAiAgentOptions options;
  options.task = TaskType::AssistLabeling;
  options.format = ResponseFormat::StructuredTags;
  start(client, options, 5);
  for (int i = 0; i < 5; ++i) {
    send_result(100 + i, 0.0, 50.0);
  }
  ASSERT_TRUE(agent->wait_idle(5s));
  const auto payloads = client->payloads();
  ASSERT_EQ(payloads.size(), 1u);
  EXPECT_EQ(count_of(payloads[0].at("prompt"), "Instance "), 5u);
  EXPECT_EQ(payloads[0].at("metadata").at("task_type"), "AssistLabeling");
  const auto got = received();
  ASSERT_EQ(got.size(), 5u);
  std::map<std::int64_t, std::string> by_row;
  for (const auto& e : got) {
    by_row[e.row_id] = e.text;
  }
  EXPECT_EQ(by_row[100], "OK");
  EXPECT_EQ(by_row[101], "NonOK");
  EXPECT_EQ(by_row[104], "OK");
}

TEST_F(GenAiAgentTest, LabelingUsesAgreeingRowsAsExemplars)
{
  auto client = std::make_shared<RecordingClient>("<label>NonOK</label>");
  GenAiAgentOptions options;
  options.task = TaskType::AssistLabeling;
  options.format = ResponseFormat::StructuredTags;
  start(client, options, 1);
  send_result(1, 5.0, 5.0);
  send_result(2, 5.0, 5.2);
  ASSERT_TRUE(agent->wait_idle(5s));
  EXPECT_EQ(agent->buffer().exemplars().size(), 2u);
  EXPECT_TRUE(client->payloads().empty());
}

TEST_F(GenAiAgentTest, StalledLlmDoesNotBlockMonitor)
{
  testing::MockLlmBehavior slow;
  slow.delay = 10s;
  testing::MockLlmServer server(slow);
  ::setenv("EDGEAI_TEST_KEY", "k", 1);
  GenAiConfig llm;
  llm.endpoint_url = server.url();
  llm.api_key_env_var = "EDGEAI_TEST_KEY";
  llm.request_timeout_ms = 500;
  start(std::make_shared<HttpLlmClient>(llm));
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 20; ++i) {
    send_result(i + 1, 0.0, 10.0);
  }
  // Publishing onto the output topic returns at once even though every row
  // triggers a stalled request.
  EXPECT_LT(std::chrono::steady_clock::now() - t0, 200ms);
  ASSERT_TRUE(testing::wait_until([&] { return received().size() == 20; }, 10s));
  for (const auto& e : received()) {
    EXPECT_EQ(e.text, "unavailable: timeout");
  }
  agent->stop();
  server.stop();
  ::unsetenv("EDGEAI_TEST_KEY");
}

TEST_F(GenAiAgentTest, TemplateEditsApplyToLaterRows)
{
  testing::TempDir dir;
  write_file(dir / "explain", "first {{features}}");
  auto client = std::make_shared<RecordingClient>();
  GenAiConfig config;
  config.template_dir = dir.path().string();
  GenAiAgentOptions options;
  options.template_poll = 20ms;
  agent = std::make_unique<GenAiAgent>(bus, topics, config, DeviationPolicy{DeviationMode::Absolute, 1.0},
                                       testing::plant_schema(), client, options);
  agent->start();
  send_result(1, 0.0, 10.0);
  ASSERT_TRUE(agent->wait_idle(5s));
  write_file(dir / "explain", "second {{features}}");
  ASSERT_TRUE(testing::wait_until([&] {
    return agent->templates().resolve(TaskType::ExplainPrediction)->body == "second {{features}}";
  }));
  send_result(2, 0.0, 10.0);
  ASSERT_TRUE(agent->wait_idle(5s));
  const auto payloads = client->payloads();
  ASSERT_EQ(payloads.size(), 2u);
  EXPECT_EQ(payloads[0].at("prompt").get<std::string>().rfind("first", 0), 0u);
  EXPECT_EQ(payloads[1].at("prompt").get<std::string>().rfind("second", 0), 0u);
}

}  // namespace
}  // namespace edgeai
