// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include "gpic/network.hpp"
#include "gpic/trainer.hpp"

namespace gpic {

// Every tunable default in one place; the CLI overlays flag values on top.
struct RunConfig {
  NetworkConfig network;
  TrainerConfig trainer;
};

// Plain-text key=value lines; '#' comments and blank lines are ignored.
// Unknown keys and malformed values are rejected with their line number.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// The parseable keys with their current values, loadable by parse_run_config.
std::string render_run_config(const RunConfig& config);

}  // namespace gpic
