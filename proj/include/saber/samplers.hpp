// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "saber/backend.hpp"
#include "saber/core_state.hpp"

namespace saber {

inline constexpr std::size_t kNoLimit = std::numeric_limits<std::size_t>::max();

enum class ThresholdMode {
    running_mean, // mean of the current ledger
    init_mean,    // mean of each unmasked token's first-ever commit confidence
};

struct SaberConfig {
    // Remask divisor: budget = max(1, floor(|drafts| / mu)).
    int mu = 4;
    // Threshold used while nothing is unmasked.
    double c_max = 0.9;
    // Runs stop after ceil(step_cap_factor * L) steps.
    double step_cap_factor = 2.0;
    // Backtracking is suspended after 3 consecutive steps whose net progress
    // (drafts - remasks) falls below this.
    int min_net_progress = 1;
    bool backtracking_enabled = true;
    // When false, each step drafts only the single most confident masked position.
    bool adaptive_enabled = true;
    ThresholdMode threshold_mode = ThresholdMode::running_mean;

    // Throws InputError naming the offending field.
    void validate() const;
    std::size_t step_cap(std::size_t gen_length) const;

    bool operator==(const SaberConfig &) const = default;
};

inline constexpr int kStallStepsBeforeSuspend = 3;

const char *to_string(ThresholdMode mode);
ThresholdMode parse_threshold_mode(std::string_view text);

struct Draft {
    std::size_t index = 0;
    TokenId token = 0;
    double confidence = 0.0;

    bool operator==(const Draft &) const = default;
};

struct StepOutcome {
    // Absent for baselines that do not threshold.
    std::optional<double> threshold;
    std::vector<Draft> drafted;
    std::size_t budget = 0;
    // Confidence drop per previously unmasked index (empty unless backtracking ran).
    std::map<std::size_t, double> drops;
    std::vector<std::size_t> remasked;
    bool fallback_used = false;
    bool backtracked = false;
    int backend_calls = 0;
};

/// Per-run bookkeeping that lives outside SequenceState.
struct SaberRunContext {
    // First commit confidence of every index ever unmasked in this run.
    std::map<std::size_t, double> first_unmask;
    int stalled_steps = 0;
    bool backtracking_suspended = false;
};

/// c_max when the ledger is empty, otherwise the mean selected by cfg.threshold_mode.
double compute_threshold(const SequenceState &state, const SaberConfig &cfg, const SaberRunContext *ctx = nullptr);

/// Masked positions below `limit` whose top_prob >= threshold, ascending by index.
std::vector<Draft> select_draft_set(const PredictionSet &preds, const SequenceState &state, double threshold,
                                    std::size_t limit = kNoLimit);

std::size_t compute_remask_budget(std::size_t draft_size, const SaberConfig &cfg);

/// ledger[j] - reeval[j].cur_prob for every j unmasked in `prior`.
/// Throws ContractError if a required cur_prob is missing.
std::map<std::size_t, double> compute_confidence_drops(const SequenceState &prior, const PredictionSet &reeval);

/// The min(budget, |eligible|) indices with the largest drop; ties go to the
/// lower index. With exclude_non_positive, drops <= 0 are never eligible.
std::vector<std::size_t> select_remask_set(const std::map<std::size_t, double> &drops, std::size_t budget,
                                           bool exclude_non_positive = true);

/// Masked position below `limit` with the highest top_prob (lowest index on ties).
std::optional<Draft> most_confident_masked(const PredictionSet &preds, const SequenceState &state,
                                           std::size_t limit = kNoLimit);

/// One full Saber denoising step: adaptive drafting, then backtracking remask.
/// Only masked positions below `limit` are drafted.
StepOutcome saber_step(SequenceState &state, const Backend &backend, const SaberConfig &cfg, SaberRunContext &ctx,
                       std::size_t limit = kNoLimit);

enum class SamplerKind { saber, random, entropy, confidence, confidence_p, static_threshold };

/// Strategy identifier. Textual forms: "saber", "random", "entropy",
/// "confidence", "confidence_p:<k>", "static_threshold:<theta>".
struct SamplerId {
    SamplerKind kind = SamplerKind::saber;
    std::size_t parallel = 1;
    double threshold = 0.9;

    static SamplerId parse(std::string_view text);
    std::string to_string() const;

    bool operator==(const SamplerId &) const = default;
};

/// One step of a non-Saber sampler. `rng` is only consumed by `random`.
StepOutcome baseline_step(SequenceState &state, const Backend &backend, const SamplerId &variant, std::mt19937_64 &rng,
                          std::size_t limit = kNoLimit);

} // namespace saber
