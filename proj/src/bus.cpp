#include "edgeai/bus.hpp"

#include <algorithm>
#include <cmath>

#include "edgeai/errors.hpp"

namespace edgeai {

std::string_view to_string(ConnectionStatus status) noexcept
{
  switch (status) {
    case ConnectionStatus::Disconnected: return "Disconnected";
    case ConnectionStatus::Connecting: return "Connecting";
    case ConnectionStatus::Connected: return "Connected";
    case ConnectionStatus::Backoff: return "Backoff";
  }
  return "Unknown";
}

bool topic_matches(std::string_view filter, std::string_view topic) noexcept
{
  std::size_t f = 0;
  std::size_t t = 0;
  while (true) {
    const std::size_t f_end = std::min(filter.find('/', f), filter.size());
    const std::size_t t_end = std::min(topic.find('/', t), topic.size());
    const std::string_view f_level = filter.substr(f, f_end - f);
    if (f_level == "#") {
      return true;
    }
    const std::string_view t_level = topic.substr(t, t_end - t);
    if (f_level != "+" && f_level != t_level) {
      return false;
    }
    const bool f_last = f_end == filter.size();
    const bool t_last = t_end == topic.size();
    if (f_last || t_last) {
      if (f_last && t_last) {
        return true;
      }
      // "a/#" also matches "a".
      return t_last && !f_last && filter.substr(f_end + 1) == "#";
    }
    f = f_end + 1;
    t = t_end + 1;
  }
}

void check_publish_arguments(std::string_view topic, std::string_view payload)
{
  if (topic.empty()) {
    throw Error(Errc::ConfigError, "topic", "topic must not be empty");
  }
  if (topic.find_first_of("+#") != std::string_view::npos) {
    throw Error(Errc::ConfigError, std::string(topic), "wildcards are not allowed when publishing");
  }
  if (payload.size() > kMaxPayloadBytes) {
    throw Error(Errc::PayloadTooLarge, std::string(topic),
                "payload of " + std::to_string(payload.size()) + " bytes exceeds " +
                    std::to_string(kMaxPayloadBytes));
  }
}

std::chrono::milliseconds backoff_delay(const BackoffPolicy& policy, int retry_count,
                                        double unit_noise) noexcept
{
  const int exponent = std::max(retry_count, 1) - 1;
  double delay = static_cast<double>(policy.base.count()) * std::pow(policy.factor, exponent);
  delay = std::min(delay, static_cast<double>(policy.cap.count()));
  delay *= 1.0 + policy.jitter * std::clamp(unit_noise, -1.0, 1.0);
  return std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(delay)));
}

namespace detail {

std::uint64_t SubscriptionTable::add(std::string filter, MessageHandler handler,
                                     bool& first_for_filter)
{
  auto entry = std::make_shared<Entry>();
  entry->filter = std::move(filter);
  entry->handler = std::move(handler);
  std::lock_guard lock(mutex_);
  first_for_filter = std::none_of(entries_.begin(), entries_.end(),
                                  [&](const auto& e) { return e->filter == entry->filter; });
  entry->id = next_id_++;
  entries_.push_back(entry);
  return entry->id;
}

void SubscriptionTable::set_release_callback(std::function<void(const std::string&)> callback)
{
  std::lock_guard lock(callback_mutex_);
  on_filter_released_ = std::move(callback);
}

void SubscriptionTable::remove(std::uint64_t id)
{
  std::shared_ptr<Entry> removed;
  std::optional<std::string> released;
  {
    std::lock_guard lock(mutex_);
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [id](const auto& e) { return e->id == id; });
    if (it == entries_.end()) {
      return;
    }
    removed = *it;
    entries_.erase(it);
    if (std::none_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e->filter == removed->filter; })) {
      released = removed->filter;
    }
  }
  {
    // Waits for an in-progress invocation on another thread to finish.
    std::lock_guard running(removed->running);
    removed->active = false;
  }
  if (released) {
    std::lock_guard lock(callback_mutex_);
    if (on_filter_released_) {
      on_filter_released_(*released);
    }
  }
}

void SubscriptionTable::dispatch(const Envelope& envelope)
{
  std::vector<std::shared_ptr<Entry>> matching;
  {
    std::lock_guard lock(mutex_);
    for (const auto& entry : entries_) {
      if (topic_matches(entry->filter, envelope.topic)) {
        matching.push_back(entry);
      }
    }
  }
  for (const auto& entry : matching) {
    std::lock_guard running(entry->running);
    if (entry->active) {
      entry->handler(envelope);
    }
  }
}

std::vector<std::string> SubscriptionTable::filters() const
{
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& entry : entries_) {
    if (std::find(out.begin(), out.end(), entry->filter) == out.end()) {
      out.push_back(entry->filter);
    }
  }
  return out;
}

}  // namespace detail

SubscriptionHandle::SubscriptionHandle(std::weak_ptr<detail::SubscriptionTable> table,
                                       std::uint64_t id)
    : table_(std::move(table)), id_(id)
{
}

SubscriptionHandle::SubscriptionHandle(SubscriptionHandle&& other) noexcept
    : table_(std::move(other.table_)), id_(std::exchange(other.id_, 0))
{
}

SubscriptionHandle& SubscriptionHandle::operator=(SubscriptionHandle&& other) noexcept
{
  if (this != &other) {
    unsubscribe();
    table_ = std::move(other.table_);
    id_ = std::exchange(other.id_, 0);
  }
  return *this;
}

SubscriptionHandle::~SubscriptionHandle()
{
  unsubscribe();
}

void SubscriptionHandle::unsubscribe()
{
  if (id_ == 0) {
    return;
  }
  const auto id = std::exchange(id_, 0);
  if (auto table = table_.lock()) {
    table->remove(id);
  }
}

}  // namespace edgeai
