// SPDX-License-Identifier: Apache-2.0
//
// Subcommands of the msvq tool. Exit codes: 0 success, 2 configuration
// error, 3 numeric failure during training, 4 I/O or checkpoint error.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "msvq/config.hpp"

namespace msvq {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitNumeric = 3, kExitIo = 4 };

/// Written to a run directory before any other artifact.
struct RunManifest {
  std::string command;
  nlohmann::json config;  // resolved config echo
  std::uint64_t seed = 0;
  std::string precision = "f32";
  std::vector<std::string> checkpoints;
  std::string metrics;
  std::vector<std::string> reports;
  std::string tool_version = kToolVersion;
};

nlohmann::json to_json(const RunManifest& m);
void write_manifest(const RunManifest& m, const std::filesystem::path& dir);

/// argv-style entry point; diagnostics go to stderr, reports to stdout.
int run_cli(const std::vector<std::string>& args);

}  // namespace msvq
