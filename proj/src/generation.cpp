// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#include "saber/generation.hpp"

#include <algorithm>

namespace saber {

using nlohmann::ordered_json;

ordered_json to_json(const SaberConfig &cfg) {
    ordered_json j;
    j["mu"] = cfg.mu;
    j["c_max"] = cfg.c_max;
    j["step_cap_factor"] = cfg.step_cap_factor;
    j["min_net_progress"] = cfg.min_net_progress;
    j["backtracking_enabled"] = cfg.backtracking_enabled;
    j["adaptive_enabled"] = cfg.adaptive_enabled;
    j["threshold_mode"] = to_string(cfg.threshold_mode);
    return j;
}

namespace {

struct LoopSpec {
    const SamplerId &strategy;
    // 0 means a single block spanning the whole sequence.
    std::size_t block_length = 0;
};

void record_step(Trace &trace, std::size_t step, const StepOutcome &outcome) {
    if (outcome.threshold) {
        trace.record(TraceEvent::threshold(step, *outcome.threshold));
    }
    if (outcome.fallback_used) {
        trace.record(TraceEvent::fallback(step, outcome.drafted.front().index));
    }
    for (const auto &d : outcome.drafted) {
        trace.record(TraceEvent::unmask(step, d.index, d.token, d.confidence));
    }
    for (std::size_t index : outcome.remasked) {
        trace.record(TraceEvent::remask(step, index, outcome.drops.at(index)));
    }
}

ordered_json end_meta(const GenerationResult &r) {
    ordered_json j;
    j["steps_used"] = r.steps_used;
    j["backend_calls"] = r.backend_calls;
    j["completed"] = r.completed;
    return j;
}

GenerationResult run_loop(SequenceState state, const Backend &backend, const SaberConfig &cfg, const LoopSpec &spec,
                          const RunOptions &options) {
    cfg.validate();
    const std::size_t length = state.length();
    const std::size_t cap = cfg.step_cap(length);
    const std::size_t block = spec.block_length ? spec.block_length : length;
    const bool is_saber = spec.strategy.kind == SamplerKind::saber;

    GenerationResult result;
    result.trace_id = options.run_id;

    ordered_json meta;
    meta["run_id"] = options.run_id;
    meta["strategy"] = spec.strategy.to_string();
    if (spec.block_length) {
        meta["block_length"] = spec.block_length;
    }
    meta["gen_length"] = length;
    meta["vocab_size"] = state.vocab().size;
    meta["mask_id"] = state.vocab().mask_id;
    meta["prompt"] = state.prompt();
    meta["seed"] = options.seed;
    meta["saber"] = to_json(cfg);
    for (const auto &[key, value] : options.meta.items()) {
        meta[key] = value;
    }
    result.trace.record(TraceEvent::run_meta(state.step(), std::move(meta)));

    SaberRunContext ctx;
    for (std::size_t index : state.unmasked_indices()) {
        ctx.first_unmask.emplace(index, state.ledger().at(index));
    }
    std::mt19937_64 rng(options.seed);
    std::size_t block_end = std::min(block, length);

    try {
        while (!state.complete() && result.steps_used < cap) {
            // Blocks are done once everything left of block_end is committed.
            while (block_end < length && std::none_of(state.gen().begin(), state.gen().begin() +
                                                                               static_cast<std::ptrdiff_t>(block_end),
                                                      [&](TokenId t) { return t == state.vocab().mask_id; })) {
                block_end = std::min(block_end + block, length);
            }

            const std::size_t step = state.step();
            const StepOutcome outcome = is_saber ? saber_step(state, backend, cfg, ctx, block_end)
                                                 : baseline_step(state, backend, spec.strategy, rng, block_end);
            record_step(result.trace, step, outcome);

            ++result.steps_used;
            result.backend_calls += static_cast<std::size_t>(outcome.backend_calls);
            result.remask_count += outcome.remasked.size();
            result.fallback_count += outcome.fallback_used ? 1 : 0;

            if (is_saber && !ctx.backtracking_suspended) {
                const auto net = static_cast<long long>(outcome.drafted.size()) -
                                 static_cast<long long>(outcome.remasked.size());
                ctx.stalled_steps = net < cfg.min_net_progress ? ctx.stalled_steps + 1 : 0;
                if (ctx.stalled_steps >= kStallStepsBeforeSuspend) {
                    ctx.backtracking_suspended = true;
                }
            }
        }
    } catch (const BackendError &e) {
        result.completed = false;
        auto end = end_meta(result);
        end["error"] = e.what();
        result.trace.record(TraceEvent::run_end(state.step(), std::move(end)));
        throw AbortedRunError(std::string("run '") + options.run_id + "' aborted: " + e.what(),
                              std::move(result.trace), e.kind());
    }

    result.completed = state.complete();
    result.trace.record(TraceEvent::run_end(state.step(), end_meta(result)));
    result.final_state = std::move(state);
    return result;
}

} // namespace

GenerationResult generate(SequenceState state, const Backend &backend, const SaberConfig &cfg,
                          const SamplerId &strategy, const RunOptions &options) {
    return run_loop(std::move(state), backend, cfg, LoopSpec{strategy, 0}, options);
}

GenerationResult sar_generate(SequenceState state, const Backend &backend, const SaberConfig &cfg,
                              std::size_t block_length, const SamplerId &inner, const RunOptions &options) {
    if (block_length == 0) {
        throw InputError("block_length must be >= 1");
    }
    return run_loop(std::move(state), backend, cfg, LoopSpec{inner, block_length}, options);
}

} // namespace saber
