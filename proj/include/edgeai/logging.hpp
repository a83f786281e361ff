#pragma once

#include <memory>

#include <spdlog/spdlog.h>

namespace edgeai {

// Library logger; writes to stderr so stdout stays machine-readable.
[[nodiscard]] std::shared_ptr<spdlog::logger> log();

}  // namespace edgeai
