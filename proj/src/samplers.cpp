// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#include "saber/samplers.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "saber/errors.hpp"

namespace saber {

void SaberConfig::validate() const {
    if (mu < 1) {
        throw InputError("mu must be >= 1, got " + std::to_string(mu));
    }
    if (!(c_max > 0.0 && c_max <= 1.0)) {
        throw InputError("c_max must lie in (0,1], got " + std::to_string(c_max));
    }
    if (!(step_cap_factor >= 1.0) || !std::isfinite(step_cap_factor)) {
        throw InputError("step_cap_factor must be a finite value >= 1, got " + std::to_string(step_cap_factor));
    }
    if (min_net_progress < 0) {
        throw InputError("min_net_progress must be >= 0, got " + std::to_string(min_net_progress));
    }
}

std::size_t SaberConfig::step_cap(std::size_t gen_length) const {
    return static_cast<std::size_t>(std::ceil(step_cap_factor * static_cast<double>(gen_length)));
}

const char *to_string(ThresholdMode mode) {
    return mode == ThresholdMode::running_mean ? "running_mean" : "init_mean";
}

ThresholdMode parse_threshold_mode(std::string_view text) {
    if (text == "running_mean") {
        return ThresholdMode::running_mean;
    }
    if (text == "init_mean") {
        return ThresholdMode::init_mean;
    }
    throw InputError("threshold_mode must be running_mean or init_mean, got '" + std::string(text) + "'");
}

double compute_threshold(const SequenceState &state, const SaberConfig &cfg, const SaberRunContext *ctx) {
    if (state.ledger().empty()) {
        return cfg.c_max;
    }
    if (cfg.threshold_mode == ThresholdMode::init_mean && ctx) {
        std::vector<double> firsts;
        firsts.reserve(state.ledger().size());
        for (const auto &[index, current] : state.ledger()) {
            auto it = ctx->first_unmask.find(index);
            firsts.push_back(it != ctx->first_unmask.end() ? it->second : current);
        }
        return *compensated_mean(firsts);
    }
    return *ledger_mean(state);
}

std::vector<Draft> select_draft_set(const PredictionSet &preds, const SequenceState &state, double threshold,
                                    std::size_t limit) {
    std::vector<Draft> out;
    const std::size_t end = std::min(limit, state.length());
    for (std::size_t i = 0; i < end; ++i) {
        if (state.is_masked(i) && preds[i].top_prob >= threshold) {
            out.push_back({i, preds[i].top_token, preds[i].top_prob});
        }
    }
    return out;
}

std::size_t compute_remask_budget(std::size_t draft_size, const SaberConfig &cfg) {
    return std::max<std::size_t>(1, draft_size / static_cast<std::size_t>(cfg.mu));
}

std::map<std::size_t, double> compute_confidence_drops(const SequenceState &prior, const PredictionSet &reeval) {
    std::map<std::size_t, double> drops;
    for (const auto &[index, committed] : prior.ledger()) {
        if (index >= reeval.size() || !reeval[index].cur_prob) {
            throw ContractError("backend returned no cur_prob for unmasked position " + std::to_string(index));
        }
        drops.emplace_hint(drops.end(), index, committed - *reeval[index].cur_prob);
    }
    return drops;
}

std::vector<std::size_t> select_remask_set(const std::map<std::size_t, double> &drops, std::size_t budget,
                                           bool exclude_non_positive) {
    std::vector<std::pair<std::size_t, double>> eligible;
    for (const auto &[index, drop] : drops) {
        if (!exclude_non_positive || drop > 0.0) {
            eligible.emplace_back(index, drop);
        }
    }
    const std::size_t take = std::min(budget, eligible.size());
    std::partial_sort(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(take), eligible.end(),
                      [](const auto &a, const auto &b) {
                          return a.second != b.second ? a.second > b.second : a.first < b.first;
                      });
    std::vector<std::size_t> out;
    out.reserve(take);
    for (std::size_t k = 0; k < take; ++k) {
        out.push_back(eligible[k].first);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::optional<Draft> most_confident_masked(const PredictionSet &preds, const SequenceState &state, std::size_t limit) {
    std::optional<Draft> best;
    const std::size_t end = std::min(limit, state.length());
    for (std::size_t i = 0; i < end; ++i) {
        if (state.is_masked(i) && (!best || preds[i].top_prob > best->confidence)) {
            best = Draft{i, preds[i].top_token, preds[i].top_prob};
        }
    }
    return best;
}

namespace {

bool has_masked_below(const SequenceState &state, std::size_t limit) {
    const std::size_t end = std::min(limit, state.length());
    for (std::size_t i = 0; i < end; ++i) {
        if (state.is_masked(i)) {
            return true;
        }
    }
    return false;
}

PredictionSet checked_predict(const Backend &backend, const SequenceState &state) {
    auto preds = backend.predict(state);
    check_predictions(preds, state);
    return preds;
}

} // namespace

StepOutcome saber_step(SequenceState &state, const Backend &backend, const SaberConfig &cfg, SaberRunContext &ctx,
                       std::size_t limit) {
    if (!has_masked_below(state, limit)) {
        throw StateError("saber_step called with no masked positions to draft");
    }
    const bool backtrack = cfg.backtracking_enabled && !ctx.backtracking_suspended;
    if (backtrack && !backend.scores_unmasked()) {
        throw ContractError("backend '" + backend.name() + "' cannot score unmasked tokens; backtracking needs it");
    }

    StepOutcome outcome;

    // S1: adaptive drafting against x_{t-1}.
    const auto preds = checked_predict(backend, state);
    ++outcome.backend_calls;
    outcome.threshold = compute_threshold(state, cfg, &ctx);
    if (cfg.adaptive_enabled) {
        outcome.drafted = select_draft_set(preds, state, *outcome.threshold, limit);
    }
    if (outcome.drafted.empty()) {
        outcome.drafted.push_back(*most_confident_masked(preds, state, limit));
        outcome.fallback_used = cfg.adaptive_enabled;
    }

    const SequenceState prior = state;
    for (const auto &d : outcome.drafted) {
        apply_unmask(state, d.index, d.token, d.confidence);
        ctx.first_unmask.emplace(d.index, d.confidence);
    }

    // S2: re-score U_{t-1} in the context of the drafts and revert the largest drops.
    if (backtrack && prior.unmasked_count() > 0) {
        const auto reeval = checked_predict(backend, state);
        ++outcome.backend_calls;
        outcome.backtracked = true;
        outcome.budget = compute_remask_budget(outcome.drafted.size(), cfg);
        outcome.drops = compute_confidence_drops(prior, reeval);
        outcome.remasked = select_remask_set(outcome.drops, outcome.budget);
        for (std::size_t index : outcome.remasked) {
            apply_remask(state, index);
        }
    }

    advance_step(state);
    return outcome;
}

SamplerId SamplerId::parse(std::string_view text) {
    const auto colon = text.find(':');
    const std::string_view head = text.substr(0, colon);
    const std::string_view arg = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
    auto bad = [&](const std::string &why) {
        return InputError("invalid strategy '" + std::string(text) + "': " + why);
    };
    auto no_arg = [&](SamplerKind kind) {
        if (colon != std::string_view::npos) {
            throw bad("takes no argument");
        }
        return SamplerId{kind};
    };

    if (head == "saber") return no_arg(SamplerKind::saber);
    if (head == "random") return no_arg(SamplerKind::random);
    if (head == "entropy") return no_arg(SamplerKind::entropy);
    if (head == "confidence") return no_arg(SamplerKind::confidence);
    if (head == "confidence_p") {
        std::size_t k = 0;
        auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), k);
        if (arg.empty() || ec != std::errc{} || ptr != arg.data() + arg.size() || k == 0) {
            throw bad("expected confidence_p:<k> with k >= 1");
        }
        SamplerId id{SamplerKind::confidence_p};
        id.parallel = k;
        return id;
    }
    if (head == "static_threshold") {
        double theta = 0.0;
        auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), theta);
        if (arg.empty() || ec != std::errc{} || ptr != arg.data() + arg.size() || !(theta >= 0.0 && theta <= 1.0)) {
            throw bad("expected static_threshold:<theta> with theta in [0,1]");
        }
        SamplerId id{SamplerKind::static_threshold};
        id.threshold = theta;
        return id;
    }
    throw bad("unknown sampler");
}

std::string SamplerId::to_string() const {
    switch (kind) {
    case SamplerKind::saber: return "saber";
    case SamplerKind::random: return "random";
    case SamplerKind::entropy: return "entropy";
    case SamplerKind::confidence: return "confidence";
    case SamplerKind::confidence_p: return "confidence_p:" + std::to_string(parallel);
    case SamplerKind::static_threshold: {
        char buf[32];
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, threshold);
        return "static_threshold:" + std::string(buf, ptr);
    }
    }
    return "unknown";
}

StepOutcome baseline_step(SequenceState &state, const Backend &backend, const SamplerId &variant, std::mt19937_64 &rng,
                          std::size_t limit) {
    if (variant.kind == SamplerKind::saber) {
        throw InputError("baseline_step does not run saber; use saber_step");
    }
    if (!has_masked_below(state, limit)) {
        throw StateError("baseline_step called with no masked positions to draft");
    }

    StepOutcome outcome;
    const auto preds = checked_predict(backend, state);
    ++outcome.backend_calls;

    std::vector<std::size_t> masked;
    for (std::size_t i = 0; i < std::min(limit, state.length()); ++i) {
        if (state.is_masked(i)) {
            masked.push_back(i);
        }
    }
    auto draft_of = [&](std::size_t i) { return Draft{i, preds[i].top_token, preds[i].top_prob}; };

    switch (variant.kind) {
    case SamplerKind::random: {
        std::uniform_int_distribution<std::size_t> pick(0, masked.size() - 1);
        outcome.drafted.push_back(draft_of(masked[pick(rng)]));
        break;
    }
    case SamplerKind::entropy: {
        // min_element keeps the first (lowest index) among equals.
        auto it = std::min_element(masked.begin(), masked.end(),
                                   [&](std::size_t a, std::size_t b) { return preds[a].entropy < preds[b].entropy; });
        outcome.drafted.push_back(draft_of(*it));
        break;
    }
    case SamplerKind::confidence:
    case SamplerKind::confidence_p: {
        const std::size_t k = variant.kind == SamplerKind::confidence ? 1 : variant.parallel;
        std::stable_sort(masked.begin(), masked.end(),
                         [&](std::size_t a, std::size_t b) { return preds[a].top_prob > preds[b].top_prob; });
        masked.resize(std::min(k, masked.size()));
        std::sort(masked.begin(), masked.end());
        for (std::size_t i : masked) {
            outcome.drafted.push_back(draft_of(i));
        }
        break;
    }
    case SamplerKind::static_threshold: {
        outcome.threshold = variant.threshold;
        outcome.drafted = select_draft_set(preds, state, variant.threshold, limit);
        if (outcome.drafted.empty()) {
            outcome.drafted.push_back(*most_confident_masked(preds, state, limit));
            outcome.fallback_used = true;
        }
        break;
    }
    case SamplerKind::saber: break;
    }

    for (const auto &d : outcome.drafted) {
        apply_unmask(state, d.index, d.token, d.confidence);
    }
    advance_step(state);
    return outcome;
}

} // namespace saber
