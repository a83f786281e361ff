#include "loopback_broker.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <string>

#include "edgeai/bus.hpp"
#include "edgeai/mqtt_codec.hpp"

namespace edgeai::testing {

struct LoopbackBroker::Client {
  int fd = -1;
  std::mutex write_mutex;
  std::mutex subs_mutex;
  std::string client_id;
  std::vector<std::pair<std::string, std::uint8_t>> subscriptions;
  std::uint16_t next_id = 1;
  std::atomic<bool> connected{false};
  std::atomic<bool> finished{false};
  std::thread thread;

  bool send(const std::string& frame)
  {
    std::lock_guard lock(write_mutex);
    std::string_view data(frame);
    while (!data.empty()) {
      const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
      if (n <= 0) {
        return false;
      }
      data.remove_prefix(static_cast<std::size_t>(n));
    }
    return true;
  }
};

LoopbackBroker::LoopbackBroker(int port)
{
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(listen_fd_, 64) != 0) {
    ::close(listen_fd_);
    throw std::runtime_error(std::string("broker bind failed: ") + std::strerror(errno));
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

LoopbackBroker::~LoopbackBroker()
{
  stop();
}

void LoopbackBroker::stop()
{
  if (stopping_.exchange(true)) {
    return;
  }
  if (acceptor_.joinable()) {
    acceptor_.join();
  }
  ::close(listen_fd_);
  std::vector<std::shared_ptr<Client>> clients;
  {
    std::lock_guard lock(mutex_);
    clients.swap(clients_);
  }
  for (auto& client : clients) {
    ::shutdown(client->fd, SHUT_RDWR);
  }
  for (auto& client : clients) {
    if (client->thread.joinable()) {
      client->thread.join();
    }
    ::close(client->fd);
  }
}

void LoopbackBroker::drop_all_clients()
{
  std::lock_guard lock(mutex_);
  for (auto& client : clients_) {
    ::shutdown(client->fd, SHUT_RDWR);
  }
}

std::size_t LoopbackBroker::connected_clients() const
{
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count_if(clients_.begin(), clients_.end(), [](const auto& c) {
    return c->connected && !c->finished;
  }));
}

void LoopbackBroker::prune_locked()
{
  for (auto it = clients_.begin(); it != clients_.end();) {
    if ((*it)->finished) {
      (*it)->thread.join();
      ::close((*it)->fd);
      it = clients_.erase(it);
    } else {
      ++it;
    }
  }
}

void LoopbackBroker::accept_loop()
{
  while (!stopping_) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    if (::poll(&pfd, 1, 100) <= 0) {
      continue;
    }
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      continue;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    auto client = std::make_shared<Client>();
    client->fd = fd;
    std::lock_guard lock(mutex_);
    prune_locked();
    clients_.push_back(client);
    client->thread = std::thread([this, client] { serve(client); });
  }
}

void LoopbackBroker::forward(const std::string& topic, const std::string& payload,
                             std::uint8_t qos)
{
  std::vector<std::shared_ptr<Client>> targets;
  {
    std::lock_guard lock(mutex_);
    targets = clients_;
  }
  for (auto& target : targets) {
    if (!target->connected || target->finished) {
      continue;
    }
    std::optional<std::uint8_t> granted;
    std::uint16_t packet_id = 0;
    {
      std::lock_guard lock(target->subs_mutex);
      for (const auto& [filter, sub_qos] : target->subscriptions) {
        if (topic_matches(filter, topic)) {
          granted = std::max<std::uint8_t>(granted.value_or(0), std::min(sub_qos, qos));
        }
      }
      if (granted && *granted > 0) {
        packet_id = target->next_id++;
        if (target->next_id == 0) {
          target->next_id = 1;
        }
      }
    }
    if (granted) {
      mqtt::PublishPacket packet{topic, payload, *granted, packet_id, false, false};
      target->send(mqtt::encode_publish(packet));
    }
  }
}

void LoopbackBroker::serve(const std::shared_ptr<Client>& client)
{
  mqtt::PacketReader reader;
  char buffer[65536];
  bool open = true;
  while (open && !stopping_) {
    pollfd pfd{client->fd, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, 100);
    if (ready <= 0) {
      continue;
    }
    const ssize_t n = ::recv(client->fd, buffer, sizeof buffer, 0);
    if (n <= 0) {
      break;
    }
    reader.feed({buffer, static_cast<std::size_t>(n)});
    try {
      while (auto packet = reader.next()) {
        using mqtt::PacketType;
        if (!client->connected && packet->type != PacketType::Connect) {
          open = false;
          break;
        }
        switch (packet->type) {
          case PacketType::Connect: {
            const auto connect = mqtt::parse_connect(*packet);
            if (!accepting_) {
              client->send(mqtt::encode_connack(false, 3));
              open = false;
              break;
            }
            // A reconnecting client id takes over the older connection.
            {
              std::lock_guard lock(mutex_);
              for (auto& other : clients_) {
                if (other != client && other->connected && other->client_id == connect.client_id) {
                  ::shutdown(other->fd, SHUT_RDWR);
                }
              }
            }
            client->client_id = connect.client_id;
            client->connected = true;
            client->send(mqtt::encode_connack(false, 0));
            break;
          }
          case PacketType::Subscribe: {
            const auto subscribe = mqtt::parse_subscribe(*packet);
            std::vector<std::uint8_t> codes;
            {
              std::lock_guard lock(client->subs_mutex);
              for (const auto& [filter, qos] : subscribe.filters) {
                const auto granted = std::min<std::uint8_t>(qos, 1);
                auto it = std::find_if(client->subscriptions.begin(), client->subscriptions.end(),
                                       [&](const auto& s) { return s.first == filter; });
                if (it != client->subscriptions.end()) {
                  it->second = granted;
                } else {
                  client->subscriptions.emplace_back(filter, granted);
                }
                codes.push_back(granted);
              }
            }
            client->send(mqtt::encode_suback(subscribe.packet_id, codes));
            break;
          }
          case PacketType::Unsubscribe: {
            const auto unsubscribe = mqtt::parse_unsubscribe(*packet);
            {
              std::lock_guard lock(client->subs_mutex);
              for (const auto& filter : unsubscribe.filters) {
                std::erase_if(client->subscriptions, [&](const auto& s) { return s.first == filter; });
              }
            }
            client->send(mqtt::encode_unsuback(unsubscribe.packet_id));
            break;
          }
          case PacketType::Publish: {
            const auto publish = mqtt::parse_publish(*packet);
            ++publishes_;
            if (publish.qos == 1) {
              client->send(mqtt::encode_puback(publish.packet_id));
            }
            forward(publish.topic, publish.payload, std::min<std::uint8_t>(publish.qos, 1));
            break;
          }
          case PacketType::Pingreq:
            client->send(mqtt::encode_pingresp());
            break;
          case PacketType::Disconnect:
            open = false;
            break;
          default:
            break;
        }
        if (!open) {
          break;
        }
      }
    } catch (const mqtt::DecodeError&) {
      break;
    }
  }
  ::shutdown(client->fd, SHUT_RDWR);
  client->connected = false;
  client->finished = true;
}

}  // namespace edgeai::testing
