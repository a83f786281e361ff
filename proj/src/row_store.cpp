#include "edgeai/row_store.hpp"

#include <cmath>

#include "edgeai/errors.hpp"

namespace edgeai {

using nlohmann::json;

std::string_view to_string(Provenance provenance) noexcept
{
  switch (provenance) {
    case Provenance::Sensor: return "Sensor";
    case Provenance::HumanEdited: return "HumanEdited";
    case Provenance::GenAiSuggested: return "GenAiSuggested";
  }
  return "Sensor";
}

std::string_view to_string(RowEventKind kind) noexcept
{
  switch (kind) {
    case RowEventKind::Created: return "created";
    case RowEventKind::TargetEdited: return "target_edited";
    case RowEventKind::ExplanationAttached: return "explanation_attached";
    case RowEventKind::StatusRecomputed: return "status_recomputed";
  }
  return "created";
}

RowStore::RowStore(FeatureSchema schema, DeviationPolicy policy, std::size_t capacity)
    : schema_(std::move(schema)), policy_(policy), capacity_(std::max<std::size_t>(capacity, 1))
{
}

DeviationPolicy RowStore::policy() const
{
  return policy_;
}

void RowStore::apply(View& view, const RowEvent& event, std::size_t capacity)
{
  switch (event.kind) {
    case RowEventKind::Created:
      view.emplace(event.row_id, *event.created);
      while (view.size() > capacity) {
        view.erase(view.begin());
      }
      return;
    case RowEventKind::TargetEdited:
      if (auto it = view.find(event.row_id); it != view.end()) {
        it->second.observation.target = event.target;
        it->second.target_provenance = Provenance::HumanEdited;
      }
      return;
    case RowEventKind::ExplanationAttached:
      if (auto it = view.find(event.row_id); it != view.end()) {
        it->second.explanation = event.explanation;
      }
      return;
    case RowEventKind::StatusRecomputed:
      if (auto it = view.find(event.row_id); it != view.end()) {
        it->second.status = event.status;
      }
      return;
  }
}

void RowStore::append_locked(RowEvent event)
{
  event.seq = log_.size() + 1;
  log_.push_back(event);
  apply(view_, log_.back(), capacity_);
  // A created row older than everything in a full view is evicted at once;
  // listeners still see the event.
  const auto it = view_.find(event.row_id);
  const RecordRow& row = it != view_.end() ? it->second : *log_.back().created;
  for (const auto& listener : listeners_) {
    listener(log_.back(), row);
  }
}

RowStore::Recorded RowStore::record_result(const ResultMessage& result)
{
  std::lock_guard lock(mutex_);
  if (auto it = view_.find(result.row_id); it != view_.end()) {
    return {it->second, false};
  }
  RecordRow row;
  row.row_id = result.row_id;
  row.observation = result.observation;
  row.prediction = result.prediction;
  row.prediction.row_id = result.row_id;
  row.status = classify(row.prediction, row.observation.target, policy_);
  row.target_provenance = Provenance::Sensor;
  row.ingest_us = result.ingest_us;
  row.publish_us = result.publish_us;
  row.display_us = monotonic_us();
  RowEvent event;
  event.kind = RowEventKind::Created;
  event.row_id = row.row_id;
  event.created = row;
  append_locked(std::move(event));
  return {row, true};
}

RowStore::Recorded RowStore::record_result(std::string_view payload)
{
  return record_result(decode_result(payload, schema_));
}

RecordRow RowStore::edit_target(std::int64_t row_id, double new_target)
{
  return edit_target(row_id, new_target, policy());
}

RecordRow RowStore::edit_target(std::int64_t row_id, double new_target, const DeviationPolicy& policy)
{
  if (!std::isfinite(new_target)) {
    throw Error(Errc::NonFiniteTarget, "target", "target must be a finite number");
  }
  std::lock_guard lock(mutex_);
  auto it = view_.find(row_id);
  if (it == view_.end()) {
    throw Error(Errc::RowNotFound, std::to_string(row_id), "row " + std::to_string(row_id) + " not found");
  }
  RowEvent edited;
  edited.kind = RowEventKind::TargetEdited;
  edited.row_id = row_id;
  edited.target = new_target;
  append_locked(std::move(edited));

  const RecordRow& row = view_.at(row_id);
  const StatusFlag status = classify(row.prediction, row.observation.target, policy);
  if (status != row.status) {
    RowEvent recomputed;
    recomputed.kind = RowEventKind::StatusRecomputed;
    recomputed.row_id = row_id;
    recomputed.status = status;
    append_locked(std::move(recomputed));
  }
  return view_.at(row_id);
}

std::optional<RecordRow> RowStore::attach_explanation(const ExplanationMessage& explanation)
{
  std::lock_guard lock(mutex_);
  if (view_.find(explanation.row_id) == view_.end()) {
    return std::nullopt;
  }
  RowEvent event;
  event.kind = RowEventKind::ExplanationAttached;
  event.row_id = explanation.row_id;
  event.explanation = explanation;
  append_locked(std::move(event));
  return view_.at(explanation.row_id);
}

std::optional<RecordRow> RowStore::get(std::int64_t row_id) const
{
  std::lock_guard lock(mutex_);
  if (auto it = view_.find(row_id); it != view_.end()) {
    return it->second;
  }
  return std::nullopt;
}

namespace {

std::vector<RecordRow> newest(const RowStore::View& view, std::size_t limit)
{
  std::vector<RecordRow> out;
  const std::size_t skip = view.size() > limit ? view.size() - limit : 0;
  auto it = view.begin();
  std::advance(it, static_cast<std::ptrdiff_t>(skip));
  for (; it != view.end(); ++it) {
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

std::vector<RecordRow> RowStore::rows(std::size_t limit) const
{
  std::lock_guard lock(mutex_);
  return newest(view_, limit);
}

std::size_t RowStore::size() const
{
  std::lock_guard lock(mutex_);
  return view_.size();
}

std::vector<RowEvent> RowStore::events() const
{
  std::lock_guard lock(mutex_);
  return log_;
}

RowStore::View RowStore::view() const
{
  std::lock_guard lock(mutex_);
  return view_;
}

std::size_t RowStore::nonok_count() const
{
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count_if(view_.begin(), view_.end(), [](const auto& entry) {
    return entry.second.status == StatusFlag::NonOK;
  }));
}

RowStore::View RowStore::fold(const std::vector<RowEvent>& events, std::size_t capacity)
{
  View view;
  for (const auto& event : events) {
    apply(view, event, std::max<std::size_t>(capacity, 1));
  }
  return view;
}

json RowStore::export_nonok() const
{
  std::lock_guard lock(mutex_);
  json out = json::array();
  for (const auto& [id, row] : view_) {
    if (row.status == StatusFlag::NonOK) {
      out.push_back(row_to_json(row, schema_));
    }
  }
  return out;
}

LatencyStats RowStore::latency_report() const
{
  std::vector<double> samples;
  {
    std::lock_guard lock(mutex_);
    samples.reserve(view_.size());
    for (const auto& [id, row] : view_) {
      if (row.ingest_us && row.publish_us) {
        samples.push_back(static_cast<double>(*row.publish_us - *row.ingest_us) / 1000.0);
      }
    }
  }
  return latency_stats(std::move(samples));
}

void RowStore::add_listener(Listener listener)
{
  std::lock_guard lock(mutex_);
  listeners_.push_back(std::move(listener));
}

void RowStore::with_snapshot(std::size_t limit,
                             const std::function<void(const std::vector<RecordRow>&)>& fn)
{
  std::lock_guard lock(mutex_);
  fn(newest(view_, limit));
}

json row_to_json(const RecordRow& row, const FeatureSchema& schema)
{
  json explanation = nullptr;
  if (row.explanation) {
    explanation = {{"text", row.explanation->text},
                   {"model_name", row.explanation->model_name},
                   {"flags_recalibration", row.explanation->flags_recalibration}};
  }
  auto optional_us = [](const std::optional<std::int64_t>& v) { return v ? json(*v) : json(nullptr); };
  return json{{"row_id", row.row_id},
              {"observation", observation_to_json(row.observation, schema)},
              {"prediction",
               {{"predicted", row.prediction.predicted},
                {"confidence", row.prediction.confidence},
                {"model_version", row.prediction.model_version},
                {"inference_latency_us", row.prediction.inference_latency_us}}},
              {"status", to_string(row.status)},
              {"target_provenance", to_string(row.target_provenance)},
              {"explanation", explanation},
              {"timestamps",
               {{"ingest_us", optional_us(row.ingest_us)},
                {"publish_us", optional_us(row.publish_us)},
                {"display_us", row.display_us}}}};
}

}  // namespace edgeai
