#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "edgeai/bus.hpp"
#include "edgeai/config.hpp"
#include "edgeai/dataset.hpp"
#include "edgeai/model.hpp"

namespace edgeai {

enum class StageKind {
  DropMissing,
  Normalize,
  TrainLinear,
  TrainMlp,
  Evaluate,
  ExportCsv,
  ExportJson,
  Deploy,
  Unknown,
};

[[nodiscard]] std::string_view to_string(StageKind kind) noexcept;
[[nodiscard]] StageKind stage_kind_from_string(std::string_view text) noexcept;

struct Stage {
  StageKind kind = StageKind::Unknown;
  // Original spelling, kept so unknown kinds can be reported.
  std::string kind_name;
  nlohmann::json params = nlohmann::json::object();
  std::string input_ref;
  std::string output_name;
};

enum class TriggerKind { Manual, Schedule, OnEvent };

struct Trigger {
  TriggerKind kind = TriggerKind::Manual;
  double interval_s = 0.0;
  std::string topic;
};

enum class TargetMode { LocalAgent, HttpNode, File };

struct DeployTarget {
  TargetMode mode = TargetMode::LocalAgent;
  std::string url;
  std::filesystem::path path;
};

[[nodiscard]] std::string describe(const DeployTarget& target);

// Name every pipeline can reference for its input dataset.
inline constexpr std::string_view kPipelineInput = "input";

struct PipelineSpec {
  std::string name;
  std::vector<Stage> stages;
  Trigger trigger;
  DeployTarget target;
};

// Throws ParseError for documents that are not a pipeline at all; anything
// describable as a stage or target problem is left to validate_pipeline.
[[nodiscard]] PipelineSpec pipeline_from_json(const nlohmann::json& doc);
[[nodiscard]] nlohmann::json pipeline_to_json(const PipelineSpec& spec);
[[nodiscard]] PipelineSpec load_pipeline(const std::filesystem::path& path);

struct ValidationIssue {
  std::string code;
  // Stage index, or -1 for pipeline-level issues.
  int stage = -1;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> errors;
  [[nodiscard]] bool valid() const noexcept { return errors.empty(); }
  [[nodiscard]] bool has(std::string_view code) const;
  [[nodiscard]] nlohmann::json to_json() const;
};

[[nodiscard]] ValidationReport validate_pipeline(const PipelineSpec& spec);

struct DeployReceipt {
  std::int64_t version = 0;
  std::string target;
  std::int64_t at_ms = 0;
};

struct DeployOptions {
  // LocalAgent only.
  BusPtr session;
  std::string command_topic;
  std::chrono::milliseconds timeout{5000};
};

// Throws DeployTimeout, TargetUnreachable, SchemaHashMismatch or
// CommandRejected.
DeployReceipt deploy(const ModelArtifact& artifact, const DeployTarget& target,
                     const DeployOptions& options);

struct RunContext {
  FeatureSchema schema;
  DeviationPolicy policy;
  std::optional<DeployOptions> deploy;
  // Stamped into trained artifacts; fixed so reruns produce identical bytes.
  std::int64_t trained_at_ms = 0;
};

struct PipelineResult {
  std::optional<ModelArtifact> artifact;
  ModelMetrics metrics;
  bool evaluated = false;
  std::vector<std::filesystem::path> exports;
  std::optional<DeployReceipt> receipt;
  std::vector<std::string> completed_stages;

  [[nodiscard]] nlohmann::json to_json() const;
};

// Runs the stages in order. Throws Error(StageFailure) naming the stage and
// the cause; remaining stages are skipped. Invalid specs fail before any stage.
[[nodiscard]] PipelineResult run_pipeline(const PipelineSpec& spec, const Dataset& dataset,
                                          const RunContext& context);

// Fires a runner on a schedule or on messages. A trigger that arrives while a
// run is in progress is skipped, not queued.
class ScheduleHandle {
 public:
  using Runner = std::function<void()>;

  // Throws Error(ConfigError) for a Manual trigger or a missing session for
  // OnEvent.
  ScheduleHandle(const Trigger& trigger, Runner runner, BusPtr session = nullptr);
  ~ScheduleHandle();
  ScheduleHandle(const ScheduleHandle&) = delete;
  ScheduleHandle& operator=(const ScheduleHandle&) = delete;

  void stop();
  // Requests a run as if the trigger fired.
  void fire();
  [[nodiscard]] std::uint64_t runs() const noexcept { return runs_; }
  [[nodiscard]] std::uint64_t skipped_runs() const noexcept { return skipped_; }
  // Waits until no run is active or pending.
  bool wait_idle(std::chrono::milliseconds timeout);

 private:
  void runner_loop();
  void timer_loop(std::chrono::duration<double> interval);

  Runner runner_;
  std::mutex mutex_;
  std::condition_variable cv_;
  bool pending_ = false;
  bool running_ = false;
  bool stopping_ = false;
  std::atomic<std::uint64_t> runs_{0};
  std::atomic<std::uint64_t> skipped_{0};
  SubscriptionHandle subscription_;
  std::thread runner_thread_;
  std::thread timer_thread_;
};

[[nodiscard]] std::unique_ptr<ScheduleHandle> schedule(const PipelineSpec& spec,
                                                       ScheduleHandle::Runner runner,
                                                       BusPtr session = nullptr);

}  // namespace edgeai
