#include "edgeai/logging.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>

namespace edgeai {

std::shared_ptr<spdlog::logger> log()
{
  static const std::shared_ptr<spdlog::logger> logger = [] {
    if (auto existing = spdlog::get("edgeai")) {
      return existing;
    }
    auto created = spdlog::stderr_color_mt("edgeai");
    created->set_pattern("%Y-%m-%dT%H:%M:%S.%e %^%l%$ %v");
    return created;
  }();
  return logger;
}

}  // namespace edgeai
