// Standalone loopback broker for manual runs and CLI tests.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <thread>

#include "loopback_broker.hpp"

namespace {
volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }
}  // namespace

int main(int argc, char** argv)
{
  const int port = argc > 1 ? std::atoi(argv[1]) : 1883;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  edgeai::testing::LoopbackBroker broker(port);
  std::cout << "port " << broker.port() << std::endl;
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  return 0;
}
