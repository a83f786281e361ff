#include "edgeai/cli.hpp"

#include <httplib.h>

#include <CLI11.hpp>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "edgeai/bus.hpp"
#include "edgeai/config.hpp"
#include "edgeai/designer.hpp"
#include "edgeai/gateway.hpp"
#include "edgeai/genai_agent.hpp"
#include "edgeai/inference.hpp"
#include "edgeai/ingest.hpp"
#include "edgeai/logging.hpp"

namespace edgeai::cli {

using nlohmann::json;

namespace {

constexpr std::string_view kSampleConfig = R"({
  // Broker shared by every agent. Each agent connects as client_id-<role>.
  "broker_host": "localhost",
  "broker_port": 1883,
  "client_id": "edgeai",
  // Prepended to every topic: plant1/inputTopic, plant1/outputTopic, ...
  "topic_prefix": "plant1",
  "input_topic": "inputTopic",
  "output_topic": "outputTopic",
  "command_topic": "commandTopic",
  "gateway_bind": "127.0.0.1:8080",
  "replay_rate_hz": 10,
  // NonOK when |predicted - target| > threshold (absolute)
  // or > threshold * |target| (percentage).
  "deviation_policy": {"mode": "percentage", "threshold": 0.05},
  "features": [
    {"name": "temperature", "unit": "C", "required": true, "min": -40, "max": 150},
    {"name": "pressure", "unit": "bar", "required": true, "min": 0, "max": 100},
    {"name": "flow", "unit": "l/min", "required": true, "min": 0, "max": 500},
    {"name": "vibration", "unit": "mm/s", "required": false, "min": 0, "max": 50}
  ],
  "target_name": "yield",
  "genai": {
    "endpoint_url": "https://api.openai.com/v1/chat/completions",
    // Name of the environment variable holding the API key.
    "api_key_env_var": "OPENAI_API_KEY",
    // Relative paths resolve against this file's directory.
    "template_dir": "templates",
    "request_timeout_ms": 5000,
    "few_shot_k": 3,
    "batch_size": 1
  }
}
)";

constexpr std::string_view kSampleTemplate =
    "The yield model predicted {{predicted}} but the measured yield was {{expected}} "
    "(confidence {{confidence}}).\n"
    "Sensor readings: {{features}}.\n"
    "{{instructions}}\n"
    "{{exemplars}}\n"
    "In two sentences, name the reading most likely responsible and what an operator should check.\n";

constexpr std::string_view kSamplePipeline = R"({
  "name": "yield_linear",
  "trigger": {"kind": "manual"},
  "target": {"mode": "local_agent"},
  "stages": [
    {"kind": "drop_missing", "input_ref": "input", "output_name": "clean"},
    {"kind": "normalize", "input_ref": "clean", "output_name": "scaled", "params": {"method": "zscore"}},
    {"kind": "train_linear", "input_ref": "scaled", "output_name": "model"},
    {"kind": "evaluate", "input_ref": "model", "output_name": "scored", "params": {"holdout_fraction": 0.2}},
    {"kind": "deploy", "input_ref": "scored", "output_name": "deployed"}
  ]
}
)";

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int)
{
  g_interrupted.store(true);
}

void print(std::ostream& out, const json& doc)
{
  out << doc.dump() << std::endl;
}

int report_error(std::ostream& out, const Error& e)
{
  json doc{{"error", to_string(e.code())}, {"message", e.what()}};
  if (!e.subject().empty()) {
    doc["subject"] = e.subject();
  }
  if (e.cause()) {
    doc["cause"] = to_string(*e.cause());
  }
  print(out, doc);
  log()->error("{}", e.what());
  const int code = exit_code_for(e.code());
  if (e.code() == Errc::StageFailure && e.cause()) {
    const int cause = exit_code_for(*e.cause());
    return cause == kExitConnectivity ? cause : code;
  }
  return code;
}

struct Loaded {
  DeploymentConfig config;
  std::filesystem::path dir;
};

Loaded load(const std::string& path)
{
  Loaded loaded{load_config(path), std::filesystem::path(path).parent_path()};
  auto& dir = loaded.config.genai.template_dir;
  if (!dir.empty() && std::filesystem::path(dir).is_relative()) {
    dir = (loaded.dir / dir).string();
  }
  return loaded;
}

struct BusFlags {
  int max_retries = 5;
  int backoff_ms = 500;
};

// Connects and waits for the first CONNACK. Throws TargetUnreachable once the
// retry budget is spent.
BusPtr connect_bus(const DeploymentConfig& config, const std::string& role, const BusFlags& flags,
                   const std::atomic<bool>& stop)
{
  MqttOptions options;
  options.host = config.broker_host;
  options.port = config.broker_port;
  options.client_id = config.client_id + "-" + role;
  options.max_retries = flags.max_retries;
  options.backoff.base = std::chrono::milliseconds(flags.backoff_ms);
  BusPtr session = connect(options);
  while (!session->wait_connected(std::chrono::milliseconds(100))) {
    const auto state = session->state();
    if (state.gave_up || stop.load()) {
      session->close();
      const std::string where = config.broker_host + ":" + std::to_string(config.broker_port);
      throw Error(Errc::TargetUnreachable, where,
                  "broker " + where + " unreachable: " + state.last_error.value_or("interrupted"));
    }
  }
  log()->info("{} connected to {}:{}", options.client_id, config.broker_host, config.broker_port);
  return session;
}

void finish(BusSession& session)
{
  if (!session.flush(std::chrono::seconds(5))) {
    log()->warn("unacknowledged messages left at shutdown");
  }
  session.close();
}

Model load_or_bootstrap_model(const std::string& path, const FeatureSchema& schema)
{
  if (!path.empty()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      throw Error(Errc::FileNotFound, path, "cannot open " + path);
    }
    std::stringstream bytes;
    bytes << in.rdbuf();
    const ModelArtifact artifact = deserialize_model(bytes.str());
    if (artifact.model.feature_schema_hash != schema_hash(schema)) {
      throw Error(Errc::SchemaHashMismatch, path, "model was trained for another feature schema");
    }
    return artifact.model;
  }
  log()->warn("no --model given; starting from an all-zero linear model");
  return make_artifact(Model::linear(std::vector<double>(schema.size(), 0.0), 0.0), schema).model;
}

SensorSimSpec default_sim_spec(const FeatureSchema& schema, std::uint64_t seed)
{
  SensorSimSpec spec;
  for (const auto& feature : schema.features) {
    FeatureGenerator gen;
    if (feature.min && feature.max) {
      gen.base = 0.5 * (*feature.min + *feature.max);
      gen.noise_stddev = 0.02 * (*feature.max - *feature.min);
    } else {
      gen.base = feature.min.value_or(feature.max.value_or(0.0));
      gen.noise_stddev = 1.0;
    }
    spec.features.push_back(gen);
    spec.true_weights.push_back(1.0);
  }
  spec.target_noise_stddev = 1.0;
  spec.seed = seed;
  return spec;
}

// FNV-1a over the generated observations, so two runs can be compared without
// looking at wall-clock fields.
std::string observation_digest(const SensorSimSpec& spec, const FeatureSchema& schema,
                               std::int64_t steps)
{
  SensorSimulator simulator(spec, schema);
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (std::int64_t i = 0; i < steps; ++i) {
    const std::string text = observation_to_json(simulator.observation(simulator.next()), schema).dump();
    for (unsigned char c : text) {
      hash = (hash ^ c) * 0x100000001b3ULL;
    }
  }
  std::ostringstream out;
  out << std::hex << hash;
  return out.str();
}

void write_file(const std::filesystem::path& path, std::string_view text)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(Errc::FileNotFound, path.string(), "cannot write " + path.string());
  }
  out << text;
}

ModelArtifact read_artifact(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(Errc::FileNotFound, path, "cannot open " + path);
  }
  std::stringstream bytes;
  bytes << in.rdbuf();
  return deserialize_model(bytes.str());
}

bool has_stage(const PipelineSpec& spec, StageKind kind)
{
  return std::any_of(spec.stages.begin(), spec.stages.end(),
                     [kind](const Stage& s) { return s.kind == kind; });
}

struct RunFlags {
  std::string config = "config.json";
  bool all = false;
  std::vector<std::string> components;
  std::string model;
  std::string model_bind;
  std::string ui_dir;
  std::string genai_task = "explain";
  BusFlags bus;
};

int cmd_run(const RunFlags& flags, std::ostream& out, const std::atomic<bool>& stop)
{
  std::vector<std::string> selected = flags.components;
  if (flags.all) {
    selected = {"inference", "genai", "gateway"};
  }
  if (selected.empty()) {
    throw CLI::ValidationError("run", "select components with --all or --component");
  }
  auto wants = [&](std::string_view name) {
    return std::find(selected.begin(), selected.end(), name) != selected.end();
  };
  const Loaded loaded = load(flags.config);
  const DeploymentConfig& config = loaded.config;
  const TopicSet topics = derive_topics(config);

  // Fail fast on local problems before touching the network.
  std::optional<Model> model;
  if (wants("inference")) {
    model = load_or_bootstrap_model(flags.model, config.feature_schema);
  }

  std::vector<std::pair<std::string, BusPtr>> sessions;
  for (const auto& name : selected) {
    sessions.emplace_back(name, connect_bus(config, name, flags.bus, stop));
  }
  auto session_of = [&](std::string_view name) {
    for (auto& [n, s] : sessions) {
      if (n == name) {
        return s;
      }
    }
    return BusPtr{};
  };

  std::unique_ptr<InferenceAgent> inference;
  std::unique_ptr<ModelServer> model_server;
  std::unique_ptr<GenAiAgent> genai;
  std::unique_ptr<Gateway> gateway;
  json components = json::array();

  if (wants("inference")) {
    inference = run_inference_agent(session_of("inference"), *model, config.feature_schema, topics,
                                    config.deviation_policy);
    json entry{{"name", "inference"}, {"model_version", inference->model_version()}};
    if (!flags.model_bind.empty()) {
      model_server = serve_agent_http(*inference, parse_host_port(flags.model_bind));
      entry["model_port"] = model_server->port();
    }
    components.push_back(entry);
  }
  if (wants("genai")) {
    GenAiAgentOptions options;
    options.task = task_type_from_string(flags.genai_task).value_or(TaskType::ExplainPrediction);
    if (options.task == TaskType::AssistLabeling) {
      options.format = ResponseFormat::StructuredTags;
    }
    genai = std::make_unique<GenAiAgent>(session_of("genai"), topics, config.genai,
                                         config.deviation_policy, config.feature_schema,
                                         std::make_shared<HttpLlmClient>(config.genai), options);
    genai->start();
    components.push_back({{"name", "genai"}, {"task", to_string(options.task)}});
  }
  if (wants("gateway")) {
    GatewayOptions options;
    options.bind = parse_host_port(config.gateway_bind);
    options.ui_dir = flags.ui_dir;
    gateway = std::make_unique<Gateway>(session_of("gateway"), config.feature_schema,
                                        config.deviation_policy, topics, options);
    gateway->start();
    components.push_back({{"name", "gateway"}, {"port", gateway->port()}});
  }
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    components[i]["state"] = to_string(sessions[i].second->state().status);
  }
  print(out, {{"status", "running"}, {"components", components}});

  while (!stop.load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }

  if (gateway) {
    gateway->stop();
  }
  if (genai) {
    genai->wait_idle(std::chrono::seconds(2));
    genai->stop();
  }
  if (model_server) {
    model_server->stop();
  }
  if (inference) {
    inference->wait_idle(std::chrono::seconds(2));
    inference->stop();
  }
  for (auto& [name, session] : sessions) {
    finish(*session);
  }
  print(out, {{"status", "stopped"}});
  return kExitOk;
}

}  // namespace

int exit_code_for(Errc code) noexcept
{
  switch (code) {
    case Errc::StageFailure:
    case Errc::InsufficientData:
    case Errc::SingularSystem:
    case Errc::SchemaHashMismatch:
    case Errc::CommandRejected:
    case Errc::NoCorrections:
      return kExitValidation;
    case Errc::BindError:
    case Errc::Timeout:
    case Errc::HttpError:
    case Errc::DeployTimeout:
    case Errc::TargetUnreachable:
    case Errc::CommandTimeout:
      return kExitConnectivity;
    default:
      return kExitInput;
  }
}

std::vector<std::filesystem::path> init_workspace(const std::filesystem::path& dir, bool force)
{
  const std::vector<std::pair<std::filesystem::path, std::string_view>> files{
      {dir / "config.json", kSampleConfig},
      {dir / "templates" / "explain", kSampleTemplate},
      {dir / "pipeline.json", kSamplePipeline},
  };
  if (!force) {
    for (const auto& [path, text] : files) {
      if (std::filesystem::exists(path)) {
        throw Error(Errc::PathExists, path.string(), path.string() + " exists; pass --force to overwrite");
      }
    }
  }
  std::error_code ec;
  std::filesystem::create_directories(dir / "templates", ec);
  if (ec) {
    throw Error(Errc::FileNotFound, dir.string(), "cannot create " + dir.string() + ": " + ec.message());
  }
  std::vector<std::filesystem::path> written;
  for (const auto& [path, text] : files) {
    write_file(path, text);
    written.push_back(path);
  }
  return written;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const std::atomic<bool>& stop)
{
  CLI::App app{"Edge inference, labeling and recalibration toolkit", "edgeai"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::function<int()> action;

  // init
  auto* init = app.add_subcommand("init", "Write a sample config, template and pipeline");
  std::string init_dir = ".";
  bool force = false;
  init->add_option("dir", init_dir, "Target directory");
  init->add_flag("--force", force, "Overwrite existing files");
  init->callback([&] {
    action = [&] {
      json files = json::array();
      for (const auto& path : init_workspace(init_dir, force)) {
        files.push_back(path.string());
      }
      print(out, {{"created", files}});
      return kExitOk;
    };
  });

  // run
  RunFlags run_flags;
  auto* run_cmd = app.add_subcommand("run", "Run agents until interrupted");
  run_cmd->add_option("-c,--config", run_flags.config, "Config file");
  run_cmd->add_flag("--all", run_flags.all, "Run inference, genai and gateway");
  run_cmd->add_option("--component", run_flags.components, "Component to run (repeatable)")
      ->check(CLI::IsMember({"inference", "genai", "gateway"}));
  run_cmd->add_option("--model", run_flags.model, "Model artifact for the inference agent");
  run_cmd->add_option("--model-bind", run_flags.model_bind, "host:port for the model HTTP server");
  run_cmd->add_option("--ui-dir", run_flags.ui_dir, "Static console files served by the gateway");
  run_cmd->add_option("--genai-task", run_flags.genai_task, "explain or label")
      ->check(CLI::IsMember({"explain", "label"}));
  run_cmd->add_option("--max-retries", run_flags.bus.max_retries, "Broker connection retries")
      ->check(CLI::NonNegativeNumber);
  run_cmd->add_option("--backoff-ms", run_flags.bus.backoff_ms, "First reconnect delay")
      ->check(CLI::PositiveNumber);
  run_cmd->callback([&] { action = [&] { return cmd_run(run_flags, out, stop); }; });

  // replay
  std::string replay_config = "config.json";
  std::string csv_path;
  std::optional<double> rate;
  bool loop_forever = false;
  BusFlags replay_bus;
  auto* replay = app.add_subcommand("replay", "Stream a CSV file to the input topic");
  replay->add_option("-c,--config", replay_config, "Config file");
  replay->add_option("--csv", csv_path, "CSV file")->required();
  replay->add_option("--rate", rate, "Rows per second (default: replay_rate_hz)")
      ->check(CLI::PositiveNumber);
  replay->add_flag("--loop", loop_forever, "Restart at the end of the file");
  replay->add_option("--max-retries", replay_bus.max_retries)->check(CLI::NonNegativeNumber);
  replay->add_option("--backoff-ms", replay_bus.backoff_ms)->check(CLI::PositiveNumber);
  replay->callback([&] {
    action = [&] {
      const Loaded loaded = load(replay_config);
      if (!std::filesystem::is_regular_file(csv_path)) {
        throw Error(Errc::FileNotFound, csv_path, "cannot open " + csv_path);
      }
      ReplaySpec spec{csv_path, rate.value_or(loaded.config.replay_rate_hz), loop_forever};
      BusPtr session = connect_bus(loaded.config, "replay", replay_bus, stop);
      const ReplayReport report = replay_csv(spec, loaded.config.feature_schema, *session,
                                             derive_topics(loaded.config).input, &stop);
      finish(*session);
      print(out, report_to_json(report));
      return kExitOk;
    };
  });

  // simulate
  std::string sim_config = "config.json";
  std::string sim_spec_path;
  std::int64_t steps = 100;
  std::uint64_t seed = 0;
  double sim_rate = 0.0;
  std::string dataset_out;
  BusFlags sim_bus;
  auto* simulate = app.add_subcommand("simulate", "Stream synthetic sensor readings");
  simulate->add_option("-c,--config", sim_config, "Config file");
  simulate->add_option("--steps", steps, "Number of readings")->check(CLI::NonNegativeNumber);
  simulate->add_option("--seed", seed, "Generator seed");
  simulate->add_option("--spec", sim_spec_path, "Simulator spec JSON (default: derived from the schema)");
  simulate->add_option("--rate", sim_rate, "Readings per second (0: unpaced)")
      ->check(CLI::NonNegativeNumber);
  simulate->add_option("--dataset-out", dataset_out,
                       "Write `steps` labeled rows as CSV instead of publishing");
  simulate->add_option("--max-retries", sim_bus.max_retries)->check(CLI::NonNegativeNumber);
  simulate->add_option("--backoff-ms", sim_bus.backoff_ms)->check(CLI::PositiveNumber);
  simulate->callback([&] {
    action = [&] {
      const Loaded loaded = load(sim_config);
      const FeatureSchema& schema = loaded.config.feature_schema;
      SensorSimSpec spec = default_sim_spec(schema, seed);
      if (!sim_spec_path.empty()) {
        std::ifstream in(sim_spec_path);
        if (!in) {
          throw Error(Errc::FileNotFound, sim_spec_path, "cannot open " + sim_spec_path);
        }
        try {
          spec = sim_spec_from_json(json::parse(in, nullptr, true, true));
        } catch (const json::exception& e) {
          throw Error(Errc::ParseError, sim_spec_path, e.what());
        }
        if (simulate->count("--seed") > 0) {
          spec.seed = seed;
        }
      }
      check_sim_spec(spec, schema);
      const std::string digest = observation_digest(spec, schema, steps);
      if (!dataset_out.empty()) {
        const Dataset data = generate_training_data(spec, schema, static_cast<std::size_t>(steps));
        write_dataset_csv(data, schema.target_name, dataset_out);
        print(out, {{"rows_written", data.size()}, {"path", dataset_out}, {"seed", spec.seed},
                    {"digest", digest}});
        return kExitOk;
      }
      BusPtr session = connect_bus(loaded.config, "simulate", sim_bus, stop);
      StreamOptions options{sim_rate, &stop};
      const ReplayReport report =
          stream_sensor(spec, schema, *session, derive_topics(loaded.config).input, steps, options);
      finish(*session);
      json doc = report_to_json(report);
      doc["seed"] = spec.seed;
      doc["digest"] = digest;
      print(out, doc);
      return kExitOk;
    };
  });

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "Validate, run or deploy a pipeline");
  pipeline->require_subcommand(1);
  std::string pipeline_path;
  std::string pipeline_config = "config.json";
  std::string data_path;
  std::string artifact_out;
  std::string artifact_in;
  BusFlags pipeline_bus;
  pipeline_bus.max_retries = 2;
  int deploy_timeout_ms = 5000;

  auto* validate = pipeline->add_subcommand("validate", "Check a pipeline spec");
  validate->add_option("spec", pipeline_path, "Pipeline JSON")->required();
  validate->callback([&] {
    action = [&] {
      const ValidationReport report = validate_pipeline(load_pipeline(pipeline_path));
      print(out, report.to_json());
      return report.valid() ? kExitOk : kExitValidation;
    };
  });

  auto* prun = pipeline->add_subcommand("run", "Run a pipeline over a CSV dataset");
  prun->add_option("spec", pipeline_path, "Pipeline JSON")->required();
  prun->add_option("-c,--config", pipeline_config, "Config file");
  prun->add_option("--data", data_path, "Training CSV")->required();
  prun->add_option("--artifact-out", artifact_out, "Write the trained artifact here");
  prun->add_option("--deploy-timeout-ms", deploy_timeout_ms)->check(CLI::PositiveNumber);
  prun->add_option("--max-retries", pipeline_bus.max_retries)->check(CLI::NonNegativeNumber);
  prun->add_option("--backoff-ms", pipeline_bus.backoff_ms)->check(CLI::PositiveNumber);
  prun->callback([&] {
    action = [&] {
      const PipelineSpec spec = load_pipeline(pipeline_path);
      const ValidationReport report = validate_pipeline(spec);
      if (!report.valid()) {
        print(out, report.to_json());
        return kExitValidation;
      }
      const Loaded loaded = load(pipeline_config);
      const Dataset data = read_dataset_csv(data_path, loaded.config.feature_schema);
      RunContext context{loaded.config.feature_schema, loaded.config.deviation_policy, std::nullopt,
                         wall_clock_ms()};
      BusPtr session;
      if (has_stage(spec, StageKind::Deploy)) {
        DeployOptions options;
        options.timeout = std::chrono::milliseconds(deploy_timeout_ms);
        if (spec.target.mode == TargetMode::LocalAgent) {
          session = connect_bus(loaded.config, "designer", pipeline_bus, stop);
          options.session = session;
          options.command_topic = derive_topics(loaded.config).command;
        }
        context.deploy = options;
      }
      const PipelineResult result = run_pipeline(spec, data, context);
      if (session) {
        finish(*session);
      }
      if (!artifact_out.empty() && result.artifact) {
        write_file(artifact_out, serialize_model(*result.artifact));
      }
      print(out, result.to_json());
      return kExitOk;
    };
  });

  auto* pdeploy = pipeline->add_subcommand("deploy", "Deploy an existing artifact to the spec's target");
  pdeploy->add_option("spec", pipeline_path, "Pipeline JSON")->required();
  pdeploy->add_option("-c,--config", pipeline_config, "Config file");
  pdeploy->add_option("--artifact", artifact_in, "Model artifact JSON")->required();
  pdeploy->add_option("--deploy-timeout-ms", deploy_timeout_ms)->check(CLI::PositiveNumber);
  pdeploy->add_option("--max-retries", pipeline_bus.max_retries)->check(CLI::NonNegativeNumber);
  pdeploy->add_option("--backoff-ms", pipeline_bus.backoff_ms)->check(CLI::PositiveNumber);
  pdeploy->callback([&] {
    action = [&] {
      const PipelineSpec spec = load_pipeline(pipeline_path);
      const ModelArtifact artifact = read_artifact(artifact_in);
      DeployOptions options;
      options.timeout = std::chrono::milliseconds(deploy_timeout_ms);
      BusPtr session;
      if (spec.target.mode == TargetMode::LocalAgent) {
        const Loaded loaded = load(pipeline_config);
        session = connect_bus(loaded.config, "designer", pipeline_bus, stop);
        options.session = session;
        options.command_topic = derive_topics(loaded.config).command;
      }
      const DeployReceipt receipt = deploy(artifact, spec.target, options);
      if (session) {
        finish(*session);
      }
      print(out, {{"version", receipt.version}, {"target", receipt.target}, {"at_ms", receipt.at_ms}});
      return kExitOk;
    };
  });

  // export
  std::string export_config = "config.json";
  std::string export_out;
  std::string gateway_url;
  auto* exp = app.add_subcommand("export", "Download the NonOK rows from a running gateway");
  exp->add_option("-c,--config", export_config, "Config file");
  exp->add_option("-o,--out", export_out, "Output file")->required();
  exp->add_option("--url", gateway_url, "Gateway base URL (default: from gateway_bind)");
  exp->callback([&] {
    action = [&] {
      std::string base = gateway_url;
      if (base.empty()) {
        HostPort bind = parse_host_port(load(export_config).config.gateway_bind);
        if (bind.host == "0.0.0.0") {
          bind.host = "127.0.0.1";
        }
        base = "http://" + bind.host + ":" + std::to_string(bind.port);
      }
      httplib::Client client(base);
      client.set_connection_timeout(std::chrono::seconds(5));
      client.set_read_timeout(std::chrono::seconds(30));
      auto response = client.Get("/api/export/nonok");
      if (!response) {
        throw Error(Errc::TargetUnreachable, base,
                    "gateway " + base + " unreachable: " + httplib::to_string(response.error()));
      }
      if (response->status != 200) {
        throw Error(Errc::HttpError, base, "gateway answered HTTP " + std::to_string(response->status));
      }
      json rows;
      try {
        rows = json::parse(response->body);
      } catch (const json::parse_error& e) {
        throw Error(Errc::MalformedResponse, base, e.what());
      }
      write_file(export_out, response->body);
      print(out, {{"path", export_out}, {"rows", rows.is_array() ? rows.size() : 0}});
      return kExitOk;
    };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    err << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    err << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n" << app.help();
    print(out, {{"error", "UsageError"}, {"message", e.what()}});
    return kExitUsage;
  }

  try {
    return action ? action() : kExitUsage;
  } catch (const CLI::ValidationError& e) {
    err << e.what() << "\n";
    print(out, {{"error", "UsageError"}, {"message", e.what()}});
    return kExitUsage;
  } catch (const Error& e) {
    return report_error(out, e);
  } catch (const std::exception& e) {
    print(out, {{"error", "InternalError"}, {"message", e.what()}});
    log()->critical("{}", e.what());
    return kExitInput;
  }
}

int main(int argc, char** argv)
{
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::signal(SIGPIPE, SIG_IGN);
  std::vector<std::string> args(argv + (argc > 0 ? 1 : 0), argv + argc);
  return run(args, std::cout, std::cerr, g_interrupted);
}

}  // namespace edgeai::cli
