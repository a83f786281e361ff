#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace edgeai {

enum class Qos : std::uint8_t { AtMostOnce = 0, AtLeastOnce = 1 };

struct Envelope {
  std::string topic;
  std::string payload;
  std::chrono::steady_clock::time_point enqueue_time;
  Qos qos = Qos::AtLeastOnce;
};

enum class ConnectionStatus { Disconnected, Connecting, Connected, Backoff };

[[nodiscard]] std::string_view to_string(ConnectionStatus status) noexcept;

struct ConnectionState {
  ConnectionStatus status = ConnectionStatus::Disconnected;
  std::optional<std::string> last_error;
  int retry_count = 0;
  // Delay before the next attempt while in Backoff.
  std::chrono::milliseconds backoff_delay{0};
  // Set once the retry budget is spent; the session stays Disconnected.
  bool gave_up = false;
};

inline constexpr std::size_t kMaxPayloadBytes = 256 * 1024;
inline constexpr std::size_t kOfflineBufferCapacity = 1000;

using MessageHandler = std::function<void(const Envelope&)>;
using StateHandler = std::function<void(const ConnectionState&)>;

// MQTT topic-filter matching with `+` and `#` wildcards.
[[nodiscard]] bool topic_matches(std::string_view filter, std::string_view topic) noexcept;

// Throws Error(PayloadTooLarge) or Error(ConfigError) for an empty topic.
void check_publish_arguments(std::string_view topic, std::string_view payload);

namespace detail {

// Handlers registered on a session. One handler never runs concurrently with
// itself; once remove() returns that handler is never invoked again.
class SubscriptionTable {
 public:
  struct Entry {
    std::uint64_t id = 0;
    std::string filter;
    MessageHandler handler;
    std::recursive_mutex running;
    bool active = true;
  };

  std::uint64_t add(std::string filter, MessageHandler handler, bool& first_for_filter);
  // Calls the release callback when no other subscription uses the filter.
  void remove(std::uint64_t id);
  void dispatch(const Envelope& envelope);
  [[nodiscard]] std::vector<std::string> filters() const;

  // Cleared by the owning session before it goes away.
  void set_release_callback(std::function<void(const std::string&)> callback);

 private:
  mutable std::mutex mutex_;
  std::mutex callback_mutex_;
  std::function<void(const std::string&)> on_filter_released_;
  std::uint64_t next_id_ = 1;
  std::vector<std::shared_ptr<Entry>> entries_;
};

}  // namespace detail

// Owns one subscription. Destroying or calling unsubscribe() stops delivery.
class SubscriptionHandle {
 public:
  SubscriptionHandle() = default;
  SubscriptionHandle(std::weak_ptr<detail::SubscriptionTable> table, std::uint64_t id);
  SubscriptionHandle(const SubscriptionHandle&) = delete;
  SubscriptionHandle& operator=(const SubscriptionHandle&) = delete;
  SubscriptionHandle(SubscriptionHandle&& other) noexcept;
  SubscriptionHandle& operator=(SubscriptionHandle&& other) noexcept;
  ~SubscriptionHandle();

  void unsubscribe();
  [[nodiscard]] bool active() const noexcept { return id_ != 0; }

 private:
  std::weak_ptr<detail::SubscriptionTable> table_;
  std::uint64_t id_ = 0;
};

class BusSession {
 public:
  virtual ~BusSession() = default;

  // Non-blocking. Messages published while not connected are buffered
  // (kOfflineBufferCapacity, oldest dropped) and sent in order on connect.
  virtual void publish(std::string_view topic, std::string payload,
                       Qos qos = Qos::AtLeastOnce) = 0;

  [[nodiscard]] virtual SubscriptionHandle subscribe(std::string filter,
                                                     MessageHandler handler) = 0;

  [[nodiscard]] virtual ConnectionState state() const = 0;

  // Handler is called on every transition, from the session's own context.
  virtual void on_state_change(StateHandler handler) = 0;

  // Waits until every buffered or unacknowledged message has been handed off.
  virtual bool flush(std::chrono::milliseconds timeout) = 0;
  virtual bool wait_connected(std::chrono::milliseconds timeout) = 0;
  virtual void close() = 0;

  // Messages dropped from the offline buffer.
  [[nodiscard]] virtual std::uint64_t dropped_messages() const = 0;
};

using BusPtr = std::shared_ptr<BusSession>;

struct BackoffPolicy {
  std::chrono::milliseconds base{500};
  double factor = 2.0;
  std::chrono::milliseconds cap{30'000};
  double jitter = 0.10;
};

// Delay before retry `retry_count` (1-based). `unit_noise` in [-1, 1] scales
// the jitter band.
[[nodiscard]] std::chrono::milliseconds backoff_delay(const BackoffPolicy& policy,
                                                      int retry_count,
                                                      double unit_noise) noexcept;

struct MqttOptions {
  std::string host = "localhost";
  int port = 1883;
  std::string client_id;
  std::chrono::seconds keepalive{30};
  BackoffPolicy backoff;
  // 0 retries forever.
  int max_retries = 0;
  std::size_t offline_buffer = kOfflineBufferCapacity;
  std::chrono::milliseconds connect_timeout{5000};
};

// MQTT 3.1.1 session. Throws Error(ConfigError) on a malformed host or empty
// client id; connection failures are reported as states.
[[nodiscard]] BusPtr connect(const MqttOptions& options);
[[nodiscard]] BusPtr connect(const std::string& host, int port, const std::string& client_id);

// Loopback bus: synchronous delivery on the publisher's thread, Connected
// unless an outage is simulated with set_connected(false).
class InMemoryBus;
[[nodiscard]] std::shared_ptr<InMemoryBus> make_inmemory_bus();

class InMemoryBus final : public BusSession {
 public:
  InMemoryBus();
  ~InMemoryBus() override;

  void publish(std::string_view topic, std::string payload, Qos qos = Qos::AtLeastOnce) override;
  [[nodiscard]] SubscriptionHandle subscribe(std::string filter, MessageHandler handler) override;
  [[nodiscard]] ConnectionState state() const override;
  void on_state_change(StateHandler handler) override;
  bool flush(std::chrono::milliseconds timeout) override;
  bool wait_connected(std::chrono::milliseconds timeout) override;
  void close() override;
  [[nodiscard]] std::uint64_t dropped_messages() const override;

  // Simulated outage; reconnecting delivers the buffered messages in order.
  void set_connected(bool connected);
  [[nodiscard]] std::uint64_t published_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace edgeai
