#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <random>
#include <set>
#include <thread>

#include "edgeai/bus.hpp"
#include "edgeai/config.hpp"
#include "edgeai/errors.hpp"
#include "edgeai/logging.hpp"
#include "edgeai/mqtt_codec.hpp"

namespace edgeai {

namespace {

using Clock = std::chrono::steady_clock;

bool send_all(int fd, std::string_view data)
{
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) {
        continue;
      }
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

int connect_tcp(const std::string& host, int port, std::chrono::milliseconds timeout,
                std::string& error)
{
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* result = nullptr;
  const std::string service = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &result); rc != 0) {
    error = std::string("resolve ") + host + ": " + ::gai_strerror(rc);
    return -1;
  }
  int fd = -1;
  for (addrinfo* ai = result; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) {
      error = std::strerror(errno);
      continue;
    }
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      pollfd pfd{fd, POLLOUT, 0};
      rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
      if (rc == 1) {
        int so_error = 0;
        socklen_t len = sizeof so_error;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &so_error, &len);
        rc = so_error == 0 ? 0 : -1;
        errno = so_error;
      } else {
        errno = rc == 0 ? ETIMEDOUT : errno;
        rc = -1;
      }
    }
    if (rc == 0) {
      ::fcntl(fd, F_SETFL, flags & ~O_NONBLOCK);
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      break;
    }
    error = std::string("connect ") + host + ":" + service + ": " + std::strerror(errno);
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(result);
  return fd;
}

class MqttSession final : public BusSession {
 public:
  explicit MqttSession(MqttOptions options)
      : options_(std::move(options)), rng_(std::random_device{}())
  {
    table_->set_release_callback([this](const std::string& filter) { release_filter(filter); });
    consumer_ = std::thread([this] { consumer_loop(); });
    writer_ = std::thread([this] { writer_loop(); });
    io_ = std::thread([this] { io_loop(); });
  }

  ~MqttSession() override { close(); }

  void publish(std::string_view topic, std::string payload, Qos qos) override
  {
    check_publish_arguments(topic, payload);
    std::lock_guard lock(mutex_);
    if (closed_) {
      return;
    }
    if (state_.status == ConnectionStatus::Connected) {
      enqueue_publish_locked(std::string(topic), std::move(payload), qos, false);
      cv_.notify_all();
      return;
    }
    pending_.push_back({std::string(topic), std::move(payload), qos});
    if (pending_.size() > options_.offline_buffer) {
      pending_.pop_front();
      ++dropped_;
    }
  }

  SubscriptionHandle subscribe(std::string filter, MessageHandler handler) override
  {
    if (filter.empty()) {
      throw Error(Errc::ConfigError, "topic", "subscription topic must not be empty");
    }
    bool first = false;
    const std::string copy = filter;
    const auto id = table_->add(std::move(filter), std::move(handler), first);
    if (first) {
      std::unique_lock lock(mutex_);
      if (state_.status == ConnectionStatus::Connected) {
        const std::uint16_t packet_id = allocate_id_locked();
        awaiting_suback_.insert(packet_id);
        frames_.push_back(mqtt::encode_subscribe({packet_id, {{copy, 1}}}));
        cv_.notify_all();
        cv_.wait_for(lock, std::chrono::seconds(5), [&] {
          return !awaiting_suback_.contains(packet_id) ||
                 state_.status != ConnectionStatus::Connected || closed_;
        });
        awaiting_suback_.erase(packet_id);
      }
    }
    return SubscriptionHandle(table_, id);
  }

  ConnectionState state() const override
  {
    std::lock_guard lock(mutex_);
    return state_;
  }

  void on_state_change(StateHandler handler) override
  {
    std::lock_guard lock(listener_mutex_);
    listeners_.push_back(std::move(handler));
  }

  bool flush(std::chrono::milliseconds timeout) override
  {
    std::unique_lock lock(mutex_);
    return cv_.wait_for(lock, timeout, [&] {
      return (pending_.empty() && inflight_.empty() && frames_.empty() && !writer_busy_) ||
             closed_;
    });
  }

  bool wait_connected(std::chrono::milliseconds timeout) override
  {
    std::unique_lock lock(mutex_);
    return cv_.wait_for(lock, timeout, [&] {
      return state_.status == ConnectionStatus::Connected || state_.gave_up || closed_;
    }) && state_.status == ConnectionStatus::Connected;
  }

  void close() override
  {
    {
      std::unique_lock lock(mutex_);
      if (closed_) {
        return;
      }
      if (state_.status == ConnectionStatus::Connected) {
        // Let queued frames drain, then say goodbye.
        cv_.wait_for(lock, std::chrono::milliseconds(500),
                     [&] { return (frames_.empty() && !writer_busy_) ||
                                  state_.status != ConnectionStatus::Connected; });
        leaving_ = true;
        frames_.push_back(mqtt::encode_disconnect());
        cv_.notify_all();
        cv_.wait_for(lock, std::chrono::milliseconds(200),
                     [&] { return (frames_.empty() && !writer_busy_) ||
                                  state_.status != ConnectionStatus::Connected; });
      }
      closed_ = true;
      stopping_ = true;
      if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
      }
    }
    table_->set_release_callback(nullptr);
    cv_.notify_all();
    in_cv_.notify_all();
    join(io_);
    join(writer_);
    join(consumer_);
    std::lock_guard lock(mutex_);
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  std::uint64_t dropped_messages() const override
  {
    std::lock_guard lock(mutex_);
    return dropped_;
  }

 private:
  struct Outgoing {
    std::string topic;
    std::string payload;
    Qos qos;
  };

  struct Inflight {
    std::uint16_t id;
    std::string topic;
    std::string payload;
  };

  static void join(std::thread& thread)
  {
    if (thread.joinable()) {
      if (thread.get_id() == std::this_thread::get_id()) {
        thread.detach();
      } else {
        thread.join();
      }
    }
  }

  std::uint16_t allocate_id_locked()
  {
    while (true) {
      const std::uint16_t id = next_id_++;
      if (next_id_ == 0) {
        next_id_ = 1;
      }
      if (id == 0) {
        continue;
      }
      const bool busy = awaiting_suback_.contains(id) ||
                        std::any_of(inflight_.begin(), inflight_.end(),
                                    [id](const Inflight& m) { return m.id == id; });
      if (!busy) {
        return id;
      }
    }
  }

  void enqueue_publish_locked(std::string topic, std::string payload, Qos qos, bool dup)
  {
    mqtt::PublishPacket packet;
    packet.topic = std::move(topic);
    packet.payload = std::move(payload);
    packet.qos = static_cast<std::uint8_t>(qos);
    packet.dup = dup;
    if (qos == Qos::AtLeastOnce) {
      packet.packet_id = allocate_id_locked();
    }
    frames_.push_back(mqtt::encode_publish(packet));
    if (qos == Qos::AtLeastOnce) {
      inflight_.push_back({packet.packet_id, std::move(packet.topic), std::move(packet.payload)});
    }
  }

  void release_filter(const std::string& filter)
  {
    std::lock_guard lock(mutex_);
    if (state_.status == ConnectionStatus::Connected && !closed_) {
      frames_.push_back(mqtt::encode_unsubscribe({allocate_id_locked(), {filter}}));
      cv_.notify_all();
    }
  }

  void set_state(ConnectionState next)
  {
    {
      std::lock_guard lock(mutex_);
      state_ = next;
    }
    notify_listeners(next);
  }

  void notify_listeners(const ConnectionState& next)
  {
    cv_.notify_all();
    std::vector<StateHandler> copy;
    {
      std::lock_guard lock(listener_mutex_);
      copy = listeners_;
    }
    for (const auto& listener : copy) {
      listener(next);
    }
  }

  bool sleep_unless_closed(std::chrono::milliseconds delay)
  {
    std::unique_lock lock(mutex_);
    return !cv_.wait_for(lock, delay, [&] { return stopping_.load(); });
  }

  // TCP connect plus CONNECT/CONNACK. Returns the socket or -1.
  int handshake(mqtt::PacketReader& reader, std::string& error)
  {
    const int fd = connect_tcp(options_.host, options_.port, options_.connect_timeout, error);
    if (fd < 0) {
      return -1;
    }
    {
      std::lock_guard lock(mutex_);
      if (stopping_) {
        ::close(fd);
        return -1;
      }
      fd_ = fd;
    }
    const auto fail = [&](std::string why) {
      error = std::move(why);
      std::lock_guard lock(mutex_);
      ::close(fd);
      fd_ = -1;
      return -1;
    };
    mqtt::ConnectPacket connect;
    connect.client_id = options_.client_id;
    connect.keepalive_s = static_cast<std::uint16_t>(options_.keepalive.count());
    if (!send_all(fd, mqtt::encode_connect(connect))) {
      return fail("send CONNECT failed");
    }
    const auto deadline = Clock::now() + options_.connect_timeout;
    char buffer[4096];
    while (true) {
      std::optional<mqtt::Packet> packet;
      try {
        packet = reader.next();
      } catch (const mqtt::DecodeError& e) {
        return fail(e.what());
      }
      if (packet) {
        if (packet->type != mqtt::PacketType::Connack) {
          return fail("expected CONNACK");
        }
        const auto rc = mqtt::parse_connack(*packet);
        if (rc != 0) {
          return fail("broker refused connection (rc=" + std::to_string(rc) + ")");
        }
        return fd;
      }
      const auto remaining =
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      if (remaining.count() <= 0) {
        return fail("CONNACK timeout");
      }
      pollfd pfd{fd, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<std::int64_t>(remaining.count(), 250)));
      if (stopping_) {
        return fail("closing");
      }
      if (ready <= 0) {
        continue;
      }
      const ssize_t n = ::recv(fd, buffer, sizeof buffer, 0);
      if (n <= 0) {
        return fail("connection closed during handshake");
      }
      reader.feed({buffer, static_cast<std::size_t>(n)});
    }
  }

  void on_connected()
  {
    {
      std::lock_guard lock(mutex_);
      frames_.clear();
      const auto filters = table_->filters();
      if (!filters.empty()) {
        mqtt::SubscribePacket subscribe;
        subscribe.packet_id = allocate_id_locked();
        for (const auto& filter : filters) {
          subscribe.filters.emplace_back(filter, 1);
        }
        frames_.push_back(mqtt::encode_subscribe(subscribe));
      }
      for (const auto& message : inflight_) {
        mqtt::PublishPacket packet{message.topic, message.payload, 1, message.id, true, false};
        frames_.push_back(mqtt::encode_publish(packet));
      }
      while (!pending_.empty()) {
        auto message = std::move(pending_.front());
        pending_.pop_front();
        enqueue_publish_locked(std::move(message.topic), std::move(message.payload), message.qos,
                               false);
      }
      last_send_ = Clock::now();
      state_ = ConnectionState{};
      state_.status = ConnectionStatus::Connected;
    }
    notify_listeners(state());
  }

  void on_disconnected(const std::string& error)
  {
    {
      std::unique_lock lock(mutex_);
      frames_.clear();
      if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
      }
      state_.status = ConnectionStatus::Disconnected;
      cv_.wait(lock, [&] { return !writer_busy_; });
      if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
      }
    }
    ConnectionState state;
    state.status = ConnectionStatus::Disconnected;
    state.last_error = error;
    set_state(state);
  }

  void handle_packet(const mqtt::Packet& packet)
  {
    switch (packet.type) {
      case mqtt::PacketType::Publish: {
        auto publish = mqtt::parse_publish(packet);
        if (publish.qos == 1) {
          std::lock_guard lock(mutex_);
          frames_.push_back(mqtt::encode_puback(publish.packet_id));
          cv_.notify_all();
        }
        if (publish.qos > 1) {
          break;
        }
        {
          std::lock_guard lock(in_mutex_);
          inbound_.push_back({std::move(publish.topic), std::move(publish.payload), Clock::now(),
                              publish.qos == 1 ? Qos::AtLeastOnce : Qos::AtMostOnce});
        }
        in_cv_.notify_one();
        break;
      }
      case mqtt::PacketType::Puback: {
        const auto id = mqtt::parse_packet_id(packet);
        std::lock_guard lock(mutex_);
        auto it = std::find_if(inflight_.begin(), inflight_.end(),
                               [id](const Inflight& m) { return m.id == id; });
        if (it != inflight_.end()) {
          inflight_.erase(it);
        }
        cv_.notify_all();
        break;
      }
      case mqtt::PacketType::Suback: {
        const auto id = mqtt::parse_packet_id(packet);
        std::lock_guard lock(mutex_);
        awaiting_suback_.erase(id);
        cv_.notify_all();
        break;
      }
      default:
        break;
    }
  }

  std::string read_loop(mqtt::PacketReader& reader)
  {
    const auto keepalive = std::chrono::duration_cast<std::chrono::milliseconds>(options_.keepalive);
    auto last_receive = Clock::now();
    char buffer[65536];
    int fd;
    {
      std::lock_guard lock(mutex_);
      fd = fd_;
    }
    try {
      while (auto packet = reader.next()) {
        handle_packet(*packet);
      }
      while (!stopping_) {
        pollfd pfd{fd, POLLIN, 0};
        const int ready = ::poll(&pfd, 1, 250);
        if (ready < 0 && errno != EINTR) {
          return std::strerror(errno);
        }
        const auto now = Clock::now();
        if (ready > 0) {
          const ssize_t n = ::recv(fd, buffer, sizeof buffer, 0);
          if (n <= 0) {
            return n == 0 ? "connection closed by broker" : std::strerror(errno);
          }
          last_receive = now;
          reader.feed({buffer, static_cast<std::size_t>(n)});
          while (auto packet = reader.next()) {
            handle_packet(*packet);
          }
        }
        if (keepalive.count() > 0) {
          std::lock_guard lock(mutex_);
          if (now - last_send_ >= keepalive / 2 && frames_.empty()) {
            frames_.push_back(mqtt::encode_pingreq());
            last_send_ = now;
            cv_.notify_all();
          }
          if (now - last_receive > keepalive + keepalive / 2) {
            return "keepalive timeout";
          }
        }
      }
    } catch (const mqtt::DecodeError& e) {
      return std::string("protocol error: ") + e.what();
    }
    return "closing";
  }

  void io_loop()
  {
    int failures = 0;
    std::uniform_real_distribution<double> noise(-1.0, 1.0);
    while (!stopping_) {
      ConnectionState connecting;
      connecting.status = ConnectionStatus::Connecting;
      connecting.retry_count = failures;
      set_state(connecting);

      mqtt::PacketReader reader;
      std::string error;
      if (handshake(reader, error) >= 0) {
        failures = 0;
        on_connected();
        const std::string reason = read_loop(reader);
        on_disconnected(reason);
        if (!stopping_ && !leaving_) {
          log()->warn("mqtt {}: disconnected: {}", options_.client_id, reason);
        }
        continue;
      }
      if (stopping_) {
        break;
      }
      ++failures;
      if (options_.max_retries > 0 && failures > options_.max_retries) {
        ConnectionState exhausted;
        exhausted.status = ConnectionStatus::Disconnected;
        exhausted.retry_count = failures;
        exhausted.last_error = error;
        exhausted.gave_up = true;
        set_state(exhausted);
        log()->error("mqtt {}: giving up after {} attempts: {}", options_.client_id, failures, error);
        return;
      }
      ConnectionState backoff;
      backoff.status = ConnectionStatus::Backoff;
      backoff.retry_count = failures;
      backoff.last_error = error;
      backoff.backoff_delay = backoff_delay(options_.backoff, failures, noise(rng_));
      set_state(backoff);
      if (!sleep_unless_closed(backoff.backoff_delay)) {
        break;
      }
    }
    std::lock_guard lock(mutex_);
    state_.status = ConnectionStatus::Disconnected;
  }

  void writer_loop()
  {
    std::unique_lock lock(mutex_);
    while (true) {
      cv_.wait(lock, [&] {
        return stopping_ ||
               (fd_ >= 0 && state_.status == ConnectionStatus::Connected && !frames_.empty());
      });
      if (stopping_) {
        return;
      }
      std::string frame = std::move(frames_.front());
      frames_.pop_front();
      const int fd = fd_;
      writer_busy_ = true;
      lock.unlock();
      const bool ok = send_all(fd, frame);
      lock.lock();
      writer_busy_ = false;
      last_send_ = Clock::now();
      if (!ok) {
        ::shutdown(fd, SHUT_RDWR);
      }
      cv_.notify_all();
    }
  }

  void consumer_loop()
  {
    while (true) {
      Envelope envelope;
      {
        std::unique_lock lock(in_mutex_);
        in_cv_.wait(lock, [&] { return stopping_ || !inbound_.empty(); });
        if (inbound_.empty()) {
          return;
        }
        envelope = std::move(inbound_.front());
        inbound_.pop_front();
      }
      try {
        table_->dispatch(envelope);
      } catch (const std::exception& e) {
        log()->error("mqtt {}: handler for '{}' threw: {}", options_.client_id, envelope.topic,
                     e.what());
      }
    }
  }

  MqttOptions options_;
  std::shared_ptr<detail::SubscriptionTable> table_ = std::make_shared<detail::SubscriptionTable>();

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  ConnectionState state_;
  int fd_ = -1;
  bool writer_busy_ = false;
  bool closed_ = false;
  std::atomic<bool> stopping_{false};
  // Set once DISCONNECT is queued; the broker closing the socket is expected.
  std::atomic<bool> leaving_{false};
  std::deque<std::string> frames_;
  std::deque<Outgoing> pending_;
  std::deque<Inflight> inflight_;
  std::set<std::uint16_t> awaiting_suback_;
  std::uint16_t next_id_ = 1;
  std::uint64_t dropped_ = 0;
  Clock::time_point last_send_ = Clock::now();

  std::mutex in_mutex_;
  std::condition_variable in_cv_;
  std::deque<Envelope> inbound_;

  std::mutex listener_mutex_;
  std::vector<StateHandler> listeners_;

  std::mt19937_64 rng_;

  std::thread consumer_;
  std::thread writer_;
  std::thread io_;
};

}  // namespace

BusPtr connect(const MqttOptions& options)
{
  if (!is_valid_hostname(options.host)) {
    throw Error(Errc::ConfigError, "host", "malformed broker host '" + options.host + "'");
  }
  if (options.port < 1 || options.port > 65535) {
    throw Error(Errc::ConfigError, "port", "broker port out of range");
  }
  if (options.client_id.empty()) {
    throw Error(Errc::ConfigError, "client_id", "client id must not be empty");
  }
  return std::make_shared<MqttSession>(options);
}

BusPtr connect(const std::string& host, int port, const std::string& client_id)
{
  MqttOptions options;
  options.host = host;
  options.port = port;
  options.client_id = client_id;
  return connect(options);
}

}  // namespace edgeai
