#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "edgeai/config.hpp"
#include "edgeai/latency.hpp"
#include "edgeai/messages.hpp"

namespace edgeai {

enum class Provenance { Sensor, HumanEdited, GenAiSuggested };

[[nodiscard]] std::string_view to_string(Provenance provenance) noexcept;

struct RecordRow {
  std::int64_t row_id = 0;
  Observation observation;
  Prediction prediction;
  StatusFlag status = StatusFlag::OK;
  Provenance target_provenance = Provenance::Sensor;
  std::optional<ExplanationMessage> explanation;
  std::optional<std::int64_t> ingest_us;
  std::optional<std::int64_t> publish_us;
  std::int64_t display_us = 0;

  bool operator==(const RecordRow&) const = default;
};

enum class RowEventKind { Created, TargetEdited, ExplanationAttached, StatusRecomputed };

[[nodiscard]] std::string_view to_string(RowEventKind kind) noexcept;

// One entry of the append-only log. Only the fields of its kind are set.
struct RowEvent {
  std::uint64_t seq = 0;
  RowEventKind kind = RowEventKind::Created;
  std::int64_t row_id = 0;
  // Created: the row as first recorded.
  std::optional<RecordRow> created;
  // TargetEdited.
  double target = 0.0;
  // ExplanationAttached.
  std::optional<ExplanationMessage> explanation;
  // StatusRecomputed.
  StatusFlag status = StatusFlag::OK;
};

// Event-sourced store of result rows. All mutations go through one lock and
// append to the log before updating the view; the view is always the fold of
// the log. The view keeps the newest `capacity` rows.
class RowStore {
 public:
  static constexpr std::size_t kDefaultCapacity = 100'000;
  using View = std::map<std::int64_t, RecordRow>;
  // Called under the store lock, in log order.
  using Listener = std::function<void(const RowEvent&, const RecordRow&)>;

  RowStore(FeatureSchema schema, DeviationPolicy policy, std::size_t capacity = kDefaultCapacity);

  // Idempotent: a row_id already in the view leaves the store unchanged and
  // returns the stored row with `created` false. The status is recomputed
  // under the store's policy.
  struct Recorded {
    RecordRow row;
    bool created = false;
  };
  Recorded record_result(const ResultMessage& result);
  // Throws Error(SchemaError) for malformed payloads.
  Recorded record_result(std::string_view payload);

  // Throws RowNotFound or NonFiniteTarget.
  RecordRow edit_target(std::int64_t row_id, double new_target);
  RecordRow edit_target(std::int64_t row_id, double new_target, const DeviationPolicy& policy);

  // Returns nullopt when the row is unknown.
  std::optional<RecordRow> attach_explanation(const ExplanationMessage& explanation);

  [[nodiscard]] std::optional<RecordRow> get(std::int64_t row_id) const;
  // Newest `limit` rows in row_id order.
  [[nodiscard]] std::vector<RecordRow> rows(std::size_t limit = SIZE_MAX) const;
  [[nodiscard]] std::size_t size() const;
  [[nodiscard]] std::vector<RowEvent> events() const;
  [[nodiscard]] View view() const;
  [[nodiscard]] std::size_t nonok_count() const;
  [[nodiscard]] const FeatureSchema& schema() const noexcept { return schema_; }
  [[nodiscard]] DeviationPolicy policy() const;

  // Rebuilds a view from a log under the same capacity rule.
  [[nodiscard]] static View fold(const std::vector<RowEvent>& events,
                                 std::size_t capacity = kDefaultCapacity);

  [[nodiscard]] nlohmann::json export_nonok() const;
  // Throws Error(NoSamples).
  [[nodiscard]] LatencyStats latency_report() const;

  void add_listener(Listener listener);
  // Runs `fn` with the newest `limit` rows while holding the store lock, so a
  // listener registered inside sees every later event and nothing earlier.
  void with_snapshot(std::size_t limit,
                     const std::function<void(const std::vector<RecordRow>&)>& fn);

 private:
  void append_locked(RowEvent event);
  static void apply(View& view, const RowEvent& event, std::size_t capacity);

  FeatureSchema schema_;
  DeviationPolicy policy_;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  // TODO: compact events of evicted rows so long runs keep the log bounded.
  std::vector<RowEvent> log_;
  View view_;
  std::vector<Listener> listeners_;
};

[[nodiscard]] nlohmann::json row_to_json(const RecordRow& row, const FeatureSchema& schema);

}  // namespace edgeai
