#include <deque>

#include "edgeai/bus.hpp"

namespace edgeai {

struct InMemoryBus::Impl {
  std::shared_ptr<detail::SubscriptionTable> table = std::make_shared<detail::SubscriptionTable>();
  mutable std::mutex mutex;
  bool connected = true;
  bool closed = false;
  std::deque<Envelope> buffer;
  std::uint64_t dropped = 0;
  std::uint64_t published = 0;
  std::vector<StateHandler> listeners;

  ConnectionState snapshot() const
  {
    ConnectionState state;
    state.status = connected ? ConnectionStatus::Connected : ConnectionStatus::Disconnected;
    return state;
  }

  void notify(const ConnectionState& state)
  {
    std::vector<StateHandler> copy;
    {
      std::lock_guard lock(mutex);
      copy = listeners;
    }
    for (const auto& listener : copy) {
      listener(state);
    }
  }
};

std::shared_ptr<InMemoryBus> make_inmemory_bus()
{
  return std::make_shared<InMemoryBus>();
}

InMemoryBus::InMemoryBus() : impl_(std::make_unique<Impl>()) {}

InMemoryBus::~InMemoryBus() = default;

void InMemoryBus::publish(std::string_view topic, std::string payload, Qos qos)
{
  check_publish_arguments(topic, payload);
  Envelope envelope{std::string(topic), std::move(payload), std::chrono::steady_clock::now(), qos};
  {
    std::lock_guard lock(impl_->mutex);
    if (impl_->closed) {
      return;
    }
    ++impl_->published;
    if (!impl_->connected) {
      impl_->buffer.push_back(std::move(envelope));
      if (impl_->buffer.size() > kOfflineBufferCapacity) {
        impl_->buffer.pop_front();
        ++impl_->dropped;
      }
      return;
    }
  }
  impl_->table->dispatch(envelope);
}

SubscriptionHandle InMemoryBus::subscribe(std::string filter, MessageHandler handler)
{
  bool first = false;
  const auto id = impl_->table->add(std::move(filter), std::move(handler), first);
  return SubscriptionHandle(impl_->table, id);
}

ConnectionState InMemoryBus::state() const
{
  std::lock_guard lock(impl_->mutex);
  return impl_->snapshot();
}

void InMemoryBus::on_state_change(StateHandler handler)
{
  std::lock_guard lock(impl_->mutex);
  impl_->listeners.push_back(std::move(handler));
}

bool InMemoryBus::flush(std::chrono::milliseconds)
{
  std::lock_guard lock(impl_->mutex);
  return impl_->buffer.empty();
}

bool InMemoryBus::wait_connected(std::chrono::milliseconds)
{
  std::lock_guard lock(impl_->mutex);
  return impl_->connected;
}

void InMemoryBus::close()
{
  std::lock_guard lock(impl_->mutex);
  impl_->closed = true;
}

std::uint64_t InMemoryBus::dropped_messages() const
{
  std::lock_guard lock(impl_->mutex);
  return impl_->dropped;
}

std::uint64_t InMemoryBus::published_count() const
{
  std::lock_guard lock(impl_->mutex);
  return impl_->published;
}

void InMemoryBus::set_connected(bool connected)
{
  ConnectionState state;
  if (!connected) {
    std::lock_guard lock(impl_->mutex);
    if (!impl_->connected) {
      return;
    }
    impl_->connected = false;
    state = impl_->snapshot();
  } else {
    // Drain the backlog (including anything buffered meanwhile) before
    // accepting live traffic, so order is preserved.
    while (true) {
      std::deque<Envelope> backlog;
      {
        std::lock_guard lock(impl_->mutex);
        if (impl_->connected) {
          return;
        }
        if (impl_->buffer.empty()) {
          impl_->connected = true;
          state = impl_->snapshot();
          break;
        }
        backlog.swap(impl_->buffer);
      }
      for (const auto& envelope : backlog) {
        impl_->table->dispatch(envelope);
      }
    }
  }
  impl_->notify(state);
}

}  // namespace edgeai
