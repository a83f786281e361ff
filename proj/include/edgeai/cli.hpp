#pragma once

#include <atomic>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "edgeai/errors.hpp"

namespace edgeai::cli {

// Process exit codes. Stable across releases.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitConnectivity = 3;
inline constexpr int kExitUsage = 64;

[[nodiscard]] int exit_code_for(Errc code) noexcept;

// Writes config.json, templates/explain and pipeline.json under `dir`.
// Throws PathExists when any of them exists and `force` is false.
std::vector<std::filesystem::path> init_workspace(const std::filesystem::path& dir, bool force);

// Runs one command line (without the program name). Results are JSON on
// `out`; usage text goes to `err`. Long-running commands return once `stop`
// becomes true. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const std::atomic<bool>& stop);

// Entry point for the executable: wires SIGINT/SIGTERM to the stop flag.
int main(int argc, char** argv);

}  // namespace edgeai::cli
