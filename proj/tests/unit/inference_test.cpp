#include <gtest/gtest.h>

#include <mutex>
#include <random>

#include "edgeai/errors.hpp"
#include "edgeai/inference.hpp"
#include "edgeai/messages.hpp"
#include "support/fixtures.hpp"
#include "support/http_client.hpp"
#include "support/oracles.hpp"

namespace edgeai {
namespace {

using namespace std::chrono_literals;
using nlohmann::json;
using testing::thrown_code;

TopicSet plant_topics()
{
  return derive_topics(testing::plant_config());
}

InputMessage plant_input(std::int64_t row_id, double temperature, std::optional<double> target)
{
  InputMessage in;
  in.row_id = row_id;
  in.observation.ts_ms = row_id;
  in.observation.values = {temperature, 30.0, 40.0, 10.0};
  in.observation.target = target;
  return in;
}

// Output-topic collector that decodes results.
struct ResultSink {
  std::mutex mutex;
  std::vector<ResultMessage> results;
  std::vector<CommandAck> acks;

  void attach(BusSession& bus, const TopicSet& topics, std::vector<SubscriptionHandle>& subs)
  {
    subs.push_back(bus.subscribe(topics.output, [this](const Envelope& e) {
      auto r = decode_result(e.payload, testing::plant_schema());
      std::lock_guard lock(mutex);
      results.push_back(std::move(r));
    }));
    subs.push_back(bus.subscribe(topics.command, [this](const Envelope& e) {
      const Command c = decode_command(e.payload);
      if (const auto* ack = std::get_if<CommandAck>(&c)) {
        std::lock_guard lock(mutex);
        acks.push_back(*ack);
      }
    }));
  }
  std::size_t count()
  {
    std::lock_guard lock(mutex);
    return results.size();
  }
};

class AgentTest : public ::testing::Test {
 protected:
  void start(Model model)
  {
    agent = run_inference_agent(bus, std::move(model), testing::plant_schema(), topics,
                                {DeviationMode::Absolute, 1.0});
    sink.attach(*bus, topics, subs);
  }
  void send(const InputMessage& in)
  {
    bus->publish(topics.input, encode_input(in, testing::plant_schema()));
  }
  void TearDown() override
  {
    if (agent) {
      agent->stop();
    }
  }

  std::shared_ptr<InMemoryBus> bus = make_inmemory_bus();
  TopicSet topics = plant_topics();
  std::unique_ptr<InferenceAgent> agent;
  ResultSink sink;
  std::vector<SubscriptionHandle> subs;
};

TEST_F(AgentTest, ThreeInThreeOutInOrder)
{
  start(Model::linear({1.0, 0.0, 0.0, 0.0}, 0.0));
  send(plant_input(11, 20.0, 20.5));
  send(plant_input(12, 21.0, 25.0));
  send(plant_input(13, 22.0, std::nullopt));
  ASSERT_TRUE(agent->wait_idle(5s));
  ASSERT_EQ(sink.results.size(), 3u);
  EXPECT_EQ(sink.results[0].row_id, 11);
  EXPECT_EQ(sink.results[1].row_id, 12);
  EXPECT_EQ(sink.results[2].row_id, 13);
  EXPECT_DOUBLE_EQ(sink.results[0].prediction.predicted, 20.0);
  EXPECT_EQ(sink.results[0].status, StatusFlag::OK);
  EXPECT_EQ(sink.results[1].status, StatusFlag::NonOK);
  EXPECT_EQ(sink.results[2].status, StatusFlag::OK);
  EXPECT_EQ(sink.results[0].prediction.model_version, 1);
  EXPECT_TRUE(sink.results[0].ingest_us);
  EXPECT_GE(*sink.results[0].publish_us, *sink.results[0].ingest_us);
}

TEST_F(AgentTest, MalformedInputIsDropped)
{
  start(Model::linear({1.0, 0.0, 0.0, 0.0}, 0.0));
  bus->publish(topics.input, "{not json");
  bus->publish(topics.input, R"({"features":{"temperature":"hot"}})");
  bus->publish(topics.input, R"({"features":{"temperature":20,"pressure":1,"flow":1,"color":3}})");
  ASSERT_TRUE(agent->wait_idle(5s));
  EXPECT_EQ(sink.results.size(), 0u);
  EXPECT_EQ(agent->stats().dropped, 3u);
  send(plant_input(1, 20.0, std::nullopt));
  ASSERT_TRUE(agent->wait_idle(5s));
  EXPECT_EQ(sink.results.size(), 1u);
}

TEST_F(AgentTest, RecalibrationMidStreamBumpsVersion)
{
  start(Model::linear({0.0, 0.0, 0.0, 0.0}, 0.0));
  send(plant_input(1, 20.0, 40.0));
  send(plant_input(2, 21.0, 42.0));
  RecalibrateCommand recal{"req-1", {}};
  for (int i = 0; i < 10; ++i) {
    const double t = 10.0 + i;
    const json features = {{"temperature", t}, {"pressure", 30.0 + i % 3}, {"flow", 40.0 - i % 4},
                           {"vibration", 5.0 + (i * 7) % 5}};
    recal.corrections.push_back({features, 2.0 * t});
  }
  bus->publish(topics.command, encode_command(recal));
  send(plant_input(3, 22.0, 44.0));
  send(plant_input(4, 23.0, 46.0));
  ASSERT_TRUE(agent->wait_idle(5s));
  ASSERT_EQ(sink.results.size(), 4u);
  EXPECT_EQ(sink.results[0].prediction.model_version, 1);
  EXPECT_EQ(sink.results[1].prediction.model_version, 1);
  EXPECT_EQ(sink.results[2].prediction.model_version, 2);
  EXPECT_EQ(sink.results[3].prediction.model_version, 2);
  EXPECT_NEAR(sink.results[2].prediction.predicted, 44.0, 1e-6);
  EXPECT_EQ(sink.results[3].status, StatusFlag::OK);
  ASSERT_EQ(sink.acks.size(), 1u);
  EXPECT_TRUE(sink.acks[0].ok);
  EXPECT_EQ(sink.acks[0].request_id, "req-1");
  EXPECT_EQ(sink.acks[0].model_version, 2);
  EXPECT_EQ(agent->retained_versions(), std::vector<std::int64_t>{1});
}

TEST_F(AgentTest, InsufficientCorrectionsAreRejected)
{
  start(Model::linear({0.0, 0.0, 0.0, 0.0}, 0.0));
  RecalibrateCommand recal{"req-2", {{json{{"temperature", 1.0}, {"pressure", 1.0}, {"flow", 1.0}}, 1.0}}};
  const CommandAck ack = agent->submit(recal).get();
  EXPECT_FALSE(ack.ok);
  EXPECT_EQ(ack.error, "InsufficientData");
  EXPECT_EQ(agent->model_version(), 1);
}

TEST_F(AgentTest, SwapAndRollback)
{
  start(Model::linear({0.0, 0.0, 0.0, 0.0}, 1.0));
  std::vector<std::int64_t> versions;
  for (int i = 0; i < 7; ++i) {
    Model m = Model::linear({0.0, 0.0, 0.0, 0.0}, 100.0 + i);
    const ModelArtifact a = make_artifact(m, testing::plant_schema());
    const CommandAck ack = agent->submit(SwapCommand{"s" + std::to_string(i), artifact_to_json(a)}).get();
    ASSERT_TRUE(ack.ok) << ack.error;
    versions.push_back(ack.model_version);
  }
  EXPECT_EQ(versions, (std::vector<std::int64_t>{2, 3, 4, 5, 6, 7, 8}));
  EXPECT_EQ(agent->retained_versions(), (std::vector<std::int64_t>{3, 4, 5, 6, 7}));

  CommandAck ack = agent->submit(RollbackCommand{"r", 4}).get();
  ASSERT_TRUE(ack.ok);
  EXPECT_EQ(agent->model_version(), 4);
  EXPECT_EQ(agent->model()->b, 102.0);
  ack = agent->submit(RollbackCommand{"r2", 1}).get();
  EXPECT_FALSE(ack.ok);
  EXPECT_EQ(ack.error, "CommandRejected");
}

TEST_F(AgentTest, SwapWithForeignSchemaIsRejected)
{
  start(Model::linear({0.0, 0.0, 0.0, 0.0}, 1.0));
  FeatureSchema other = testing::plant_schema();
  other.features[0].name = "temp";
  const ModelArtifact foreign = make_artifact(Model::linear({1, 1, 1, 1}, 0), other);
  const CommandAck ack = agent->submit(SwapCommand{"x", artifact_to_json(foreign)}).get();
  EXPECT_FALSE(ack.ok);
  EXPECT_EQ(ack.error, "SchemaHashMismatch");
  EXPECT_EQ(agent->model_version(), 1);
}

TEST(Agent, ConstructionChecks)
{
  auto bus = make_inmemory_bus();
  Model wrong_dim = Model::linear({1.0, 2.0}, 0.0);
  EXPECT_EQ(thrown_code([&] {
              InferenceAgent a(bus, wrong_dim, testing::plant_schema(), plant_topics(), {});
            }),
            Errc::DimensionMismatch);
  Model foreign = Model::linear({1, 1, 1, 1}, 0.0);
  foreign.feature_schema_hash = "deadbeef";
  EXPECT_EQ(thrown_code([&] {
              InferenceAgent a(bus, foreign, testing::plant_schema(), plant_topics(), {});
            }),
            Errc::SchemaHashMismatch);
}

// Every result's prediction must come from the weights of the version it
// reports, even while swaps land concurrently.
TEST(Agent, VersionStampMatchesWeightsUnderConcurrentSwaps)
{
  auto bus = make_inmemory_bus();
  const TopicSet topics = plant_topics();
  auto agent = run_inference_agent(bus, Model::linear({0, 0, 0, 0}, 1000.0), testing::plant_schema(),
                                   topics, {});
  std::mutex m;
  std::vector<ResultMessage> results;
  auto sub = bus->subscribe(topics.output, [&](const Envelope& e) {
    auto r = decode_result(e.payload, testing::plant_schema());
    std::lock_guard lock(m);
    results.push_back(r);
  });
  std::thread producer([&] {
    for (int i = 0; i < 3000; ++i) {
      bus->publish(topics.input, encode_input(plant_input(i + 1, 20.0, std::nullopt),
                                              testing::plant_schema()));
    }
  });
  std::thread swapper([&] {
    for (int v = 2; v <= 40; ++v) {
      Model next = Model::linear({0, 0, 0, 0}, 1000.0 * v);
      next.version = v;
      const auto artifact = artifact_to_json(make_artifact(next, testing::plant_schema()));
      bus->publish(topics.command, encode_command(SwapCommand{"v" + std::to_string(v), artifact}));
      std::this_thread::sleep_for(1ms);
    }
  });
  producer.join();
  swapper.join();
  ASSERT_TRUE(agent->wait_idle(10s));
  agent->stop();
  ASSERT_EQ(results.size(), 3000u);
  std::int64_t last_version = 0;
  for (const auto& r : results) {
    EXPECT_EQ(r.prediction.predicted, 1000.0 * static_cast<double>(r.prediction.model_version));
    EXPECT_GE(r.prediction.model_version, last_version);
    last_version = r.prediction.model_version;
  }
  EXPECT_EQ(agent->model_version(), 40);
}

TEST(ModelHolder, VersionsOnlyIncreaseOnSwap)
{
  const FeatureSchema schema = testing::plant_schema();
  Model initial = Model::linear({0, 0, 0, 0}, 0);
  initial.feature_schema_hash = schema_hash(schema);
  initial.version = 10;
  ModelHolder holder(initial);
  Model older = Model::linear({1, 1, 1, 1}, 0);
  older.version = 3;
  EXPECT_EQ(holder.swap(make_artifact(older, schema)), 11);
  Model newer = Model::linear({1, 1, 1, 1}, 0);
  newer.version = 50;
  EXPECT_EQ(holder.swap(make_artifact(newer, schema)), 50);
}

TEST(ModelServer, PredictHealthDeploy)
{
  const FeatureSchema schema = testing::plant_schema();
  const Model model = Model::linear({1.0, 0.5, 0.25, 2.0}, 3.0);
  auto served = serve_model_http(model, schema, {"127.0.0.1", 0});
  const int port = served.server->port();
  ASSERT_GT(port, 0);

  const json features = {{"temperature", 20.0}, {"pressure", 30.0}, {"flow", 40.0}, {"vibration", 10.0}};
  auto res = testing::http_post("127.0.0.1", port, "/predict", json{{"features", features}}.dump());
  ASSERT_EQ(res.status, 200);
  const std::vector<double> x{20.0, 30.0, 40.0, 10.0};
  EXPECT_DOUBLE_EQ(res.json().at("predicted").get<double>(), predict(model, x).predicted);
  EXPECT_EQ(res.json().at("model_version"), 1);

  res = testing::http_post("127.0.0.1", port, "/predict",
                           json{{"features", {{"temperature", 20.0}}}}.dump());
  EXPECT_EQ(res.status, 400);
  EXPECT_EQ(testing::http_post("127.0.0.1", port, "/predict", "[1,2").status, 400);

  res = testing::http_get("127.0.0.1", port, "/health");
  ASSERT_EQ(res.status, 200);
  EXPECT_EQ(res.json(), (json{{"status", "ok"}, {"model_version", 1}}));

  Model next = Model::linear({0, 0, 0, 0}, 9.0);
  res = testing::http_post("127.0.0.1", port, "/deploy",
                           serialize_model(make_artifact(next, schema)));
  ASSERT_EQ(res.status, 200);
  EXPECT_EQ(res.json().at("model_version"), 2);
  EXPECT_EQ(testing::http_get("127.0.0.1", port, "/health").json().at("model_version"), 2);

  FeatureSchema other = schema;
  other.target_name = "other";
  res = testing::http_post("127.0.0.1", port, "/deploy", serialize_model(make_artifact(next, other)));
  EXPECT_EQ(res.status, 409);
  EXPECT_EQ(testing::http_post("127.0.0.1", port, "/deploy", "garbage").status, 400);
}

TEST(ModelServer, BindConflict)
{
  auto first = serve_model_http(Model::linear({0, 0, 0, 0}, 0), testing::plant_schema(),
                                {"127.0.0.1", 0});
  const int port = first.server->port();
  EXPECT_EQ(thrown_code([&] {
              (void)serve_model_http(Model::linear({0, 0, 0, 0}, 0), testing::plant_schema(),
                                     {"127.0.0.1", port});
            }),
            Errc::BindError);
}

TEST(ModelServer, AgentBackedDeployGoesThroughEventLoop)
{
  auto bus = make_inmemory_bus();
  auto agent = run_inference_agent(bus, Model::linear({0, 0, 0, 0}, 0), testing::plant_schema(),
                                   plant_topics(), {});
  auto server = serve_agent_http(*agent, {"127.0.0.1", 0});
  const auto artifact = make_artifact(Model::linear({1, 1, 1, 1}, 0), testing::plant_schema());
  const auto res = testing::http_post("127.0.0.1", server->port(), "/deploy", serialize_model(artifact));
  ASSERT_EQ(res.status, 200);
  EXPECT_EQ(agent->model_version(), 2);
  server->stop();
  agent->stop();
}

TEST(Messages, InputRoundTrip)
{
  const FeatureSchema schema = testing::plant_schema();
  InputMessage in = plant_input(77, 21.5, 99.0);
  in.ingest_us = 123456;
  in.observation.values[3] = std::nullopt;
  const InputMessage back = decode_input(encode_input(in, schema), schema);
  EXPECT_EQ(back.row_id, in.row_id);
  EXPECT_EQ(back.ingest_us, in.ingest_us);
  EXPECT_EQ(back.observation, in.observation);
}

TEST(Messages, ResultRoundTripAndSchemaErrors)
{
  const FeatureSchema schema = testing::plant_schema();
  ResultMessage r;
  r.row_id = 5;
  r.observation = plant_input(5, 20.0, 21.0).observation;
  r.prediction = {5, 20.25, 0.5, 3, 17};
  r.status = StatusFlag::NonOK;
  r.ingest_us = 10;
  r.publish_us = 20;
  const ResultMessage back = decode_result(encode_result(r, schema), schema);
  EXPECT_EQ(back.prediction, r.prediction);
  EXPECT_EQ(back.status, r.status);
  EXPECT_EQ(back.observation, r.observation);
  EXPECT_EQ(back.publish_us, r.publish_us);

  json doc = result_to_json(r, schema);
  doc["status"] = "MAYBE";
  EXPECT_EQ(thrown_code([&] { (void)decode_result(doc.dump(), schema); }), Errc::SchemaError);
  doc = result_to_json(r, schema);
  doc.erase("prediction");
  EXPECT_EQ(thrown_code([&] { (void)decode_result(doc.dump(), schema); }), Errc::SchemaError);
  EXPECT_EQ(thrown_code([&] { (void)decode_result("nope", schema); }), Errc::SchemaError);
}

TEST(Messages, CommandsRoundTrip)
{
  const RecalibrateCommand recal{"a", {{json{{"temperature", 1.0}}, 2.0}}};
  const auto c1 = std::get<RecalibrateCommand>(decode_command(encode_command(recal)));
  EXPECT_EQ(c1.request_id, "a");
  EXPECT_EQ(c1.corrections[0].features, recal.corrections[0].features);
  EXPECT_EQ(c1.corrections[0].target, 2.0);
  const auto c2 = std::get<RollbackCommand>(decode_command(encode_command(RollbackCommand{"b", 4})));
  EXPECT_EQ(c2.version, 4);
  const auto c3 = std::get<CommandAck>(decode_command(encode_command(CommandAck{"c", false, 2, "Boom"})));
  EXPECT_EQ(c3.error, "Boom");
  EXPECT_FALSE(c3.ok);
  EXPECT_EQ(thrown_code([] { (void)decode_command(R"({"cmd":"reboot"})"); }), Errc::SchemaError);
  EXPECT_EQ(thrown_code([] { (void)decode_command(R"({"cmd":"recalibrate"})"); }), Errc::SchemaError);
  EXPECT_NE(make_request_id(), make_request_id());
}

TEST(Messages, ExplanationRoundTrip)
{
  const ExplanationMessage e{9, "Pressure drifted high.", "gpt", true};
  EXPECT_EQ(decode_explanation(encode_explanation(e)), e);
  EXPECT_EQ(thrown_code([] { (void)decode_explanation(R"({"text":"x"})"); }), Errc::SchemaError);
}

TEST(Messages, RowIdsIncrease)
{
  std::int64_t last = next_row_id();
  for (int i = 0; i < 1000; ++i) {
    const std::int64_t id = next_row_id();
    ASSERT_GT(id, last);
    last = id;
  }
}

}  // namespace
}  // namespace edgeai
