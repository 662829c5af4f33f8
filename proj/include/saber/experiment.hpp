// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "saber/backend.hpp"
#include "saber/generation.hpp"
#include "saber/oracle.hpp"
#include "saber/samplers.hpp"

namespace saber {

enum class BackendKind { oracle, remote };

/// Oracle knobs; the target sequence and decoy placement are derived per seed.
struct OracleFixture {
    std::size_t window = 10;
    double base_conf = 0.3;
    double deceive_rate = 0.15;
    double deceive_conf = 0.4;
    std::int64_t vocab_size = 1024;
    TokenId mask_id = 1023;
};

struct ExperimentConfig {
    std::string strategy = "saber";
    BackendKind backend = BackendKind::oracle;
    std::string url;
    std::int64_t timeout_ms = 30000;
    OracleFixture oracle;
    SaberConfig saber;
    std::vector<TokenId> prompt;
    std::size_t gen_length = 256;
    std::size_t block_length = 128;
    std::vector<std::uint64_t> seeds = {1};
    std::filesystem::path output_dir = "runs";
    std::size_t jobs = 1;

    // Throws InputError naming the offending field.
    void validate() const;
    // Run-affecting fields only (no output_dir / jobs), embedded in run_meta.
    nlohmann::ordered_json to_json() const;
};

/// Reads a TOML config; unknown keys are rejected. Throws InputError.
ExperimentConfig load_config_toml(const std::filesystem::path &path);
ExperimentConfig parse_config_toml(std::string_view text, const std::string &source = "<string>");

std::vector<std::uint64_t> parse_seed_list(std::string_view text);

/// A strategy label resolved to a sampler plus the Saber settings it runs with.
/// Labels: any SamplerId form, the presets "saber-no-accel",
/// "saber-no-backtrack", "saber-neither", "saber-init-mean", and "sar:<label>"
/// for semi-autoregressive decoding of any of those.
struct StrategySpec {
    std::string label;
    SamplerId sampler;
    SaberConfig saber;
    std::optional<std::size_t> sar_block;
};

StrategySpec resolve_strategy(std::string_view label, const ExperimentConfig &config);

/// Labels of the ablation suite, in table order.
const std::vector<std::string> &ablation_labels();

std::unique_ptr<Backend> make_backend(const ExperimentConfig &config, std::uint64_t seed, const std::string &run_id);

/// Oracle parameters used for `seed` (target and decoys are seeded from it).
OracleParams oracle_params_for(const ExperimentConfig &config, std::uint64_t seed);

std::string run_id_for(const std::string &label, std::uint64_t seed);

struct RunRecord {
    std::string run_id;
    std::string label;
    std::uint64_t seed = 0;
    GenerationResult result;
    RunMetrics metrics;
};

/// Runs one (strategy, seed) pair in memory.
RunRecord run_experiment(const ExperimentConfig &config, const StrategySpec &spec, std::uint64_t seed);

/// Writes <run_id>.trace.jsonl and <run_id>.metrics.json under `dir`.
void write_run_files(const RunRecord &record, const std::filesystem::path &dir);

nlohmann::ordered_json result_file_json(const RunRecord &record);

std::string comparison_csv_header();
std::string comparison_csv_row(const RunRecord &record);

/// Mean +- stddev of steps, tokens/step and error rate per strategy.
std::string comparison_summary(const std::vector<RunRecord> &records);

} // namespace saber
