#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include "edgeai/bus.hpp"
#include "edgeai/config.hpp"
#include "edgeai/dataset.hpp"
#include "edgeai/row_store.hpp"

namespace httplib {
class Server;
}

namespace edgeai {

enum class RecalibrationMode { Manual, Auto };

struct CommandReceipt {
  std::string request_id;
  std::int64_t model_version = 0;
  std::size_t corrections = 0;
  RecalibrationMode mode = RecalibrationMode::Manual;
};

struct GatewayOptions {
  HostPort bind{"127.0.0.1", 8080};
  bool serve_http = true;
  std::size_t capacity = RowStore::kDefaultCapacity;
  std::size_t snapshot_rows = 500;
  // Per stream client; a client that falls this far behind is dropped.
  std::size_t client_queue = 1024;
  bool auto_recalibrate = true;
  std::size_t auto_window = 50;
  double auto_threshold = 0.2;
  // Cap on the corrections sent with an automatic recalibration.
  std::size_t auto_corrections = 50;
  std::chrono::milliseconds command_timeout{5000};
  // Static files for the operator console, served at "/" when set.
  std::filesystem::path ui_dir;
};

struct AutoRecalibrationState {
  double window_fraction = 0.0;
  std::size_t window_rows = 0;
  // Rows from older model versions do not count toward the window.
  std::int64_t min_version = 0;
  bool in_flight = false;
  std::uint64_t fired = 0;
};

class SseHub;

// Backend of the operator console. Records results and explanations from the
// bus, serves the HTTP API and the live stream, and issues recalibration
// commands.
class Gateway {
 public:
  Gateway(BusPtr session, FeatureSchema schema, DeviationPolicy policy, TopicSet topics,
          GatewayOptions options = {});
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  // Throws Error(BindError) when the HTTP port is taken.
  void start();
  void stop();

  [[nodiscard]] RowStore& store() noexcept { return store_; }
  [[nodiscard]] int port() const noexcept { return port_; }
  [[nodiscard]] const TopicSet& topics() const noexcept { return topics_; }

  // Manual: the HumanEdited rows. Auto: the NonOK rows of the detection
  // window, newest first up to auto_corrections, returned oldest first.
  [[nodiscard]] std::vector<Correction> correction_set(RecalibrationMode mode) const;
  // Publishes a recalibrate command and waits for the agent's ack.
  // Throws NoCorrections, CommandTimeout or CommandRejected.
  CommandReceipt trigger_recalibration(RecalibrationMode mode);

  [[nodiscard]] AutoRecalibrationState auto_state() const;
  // Waits until no automatic recalibration is pending or running.
  bool wait_recalibration_idle(std::chrono::milliseconds timeout);
  bool wait_rows(std::size_t count, std::chrono::milliseconds timeout);
  [[nodiscard]] std::uint64_t duplicates() const;
  [[nodiscard]] nlohmann::json config_json() const;

 private:
  void on_result(const Envelope& envelope);
  void on_explanation(const Envelope& envelope);
  void on_command(const Envelope& envelope);
  void note_created(const RecordRow& row);
  void recalibration_loop();
  void install_routes();

  BusPtr session_;
  FeatureSchema schema_;
  DeviationPolicy policy_;
  TopicSet topics_;
  GatewayOptions options_;
  RowStore store_;
  std::shared_ptr<SseHub> hub_;

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::map<std::int64_t, ExplanationMessage> pending_explanations_;
  std::map<std::string, std::shared_ptr<std::promise<CommandAck>>> pending_acks_;
  std::deque<std::int64_t> window_;
  AutoRecalibrationState auto_;
  bool auto_requested_ = false;
  bool stopping_ = false;
  std::uint64_t duplicates_ = 0;
  std::mutex recalibration_mutex_;

  SubscriptionHandle result_sub_;
  SubscriptionHandle explanation_sub_;
  SubscriptionHandle command_sub_;
  std::unique_ptr<httplib::Server> server_;
  std::thread http_thread_;
  std::thread recalibration_thread_;
  int port_ = 0;
};

}  // namespace edgeai
