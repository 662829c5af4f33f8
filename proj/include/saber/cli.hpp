// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "saber/experiment.hpp"

namespace saber::cli {

enum ExitCode : int {
    kOk = 0,
    kMismatch = 1,
    kValidation = 2,
    kBackend = 3,
    kCorruptTrace = 4,
};

int cmd_generate(const ExperimentConfig &config, std::ostream &out, std::ostream &err);

int cmd_compare(const ExperimentConfig &config, const std::vector<std::string> &strategies, std::ostream &out,
                std::ostream &err);

/// Replays a trace, checks it, prints the final sequence and metrics. With
/// `verify`, compares against a <run_id>.metrics.json file written by generate.
int cmd_replay(const std::filesystem::path &trace_path, const std::optional<std::filesystem::path> &verify,
               std::ostream &out, std::ostream &err);

/// Full command line entry point (argv[0] is the program name).
int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace saber::cli
