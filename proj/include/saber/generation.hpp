// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "saber/backend.hpp"
#include "saber/errors.hpp"
#include "saber/samplers.hpp"
#include "saber/telemetry.hpp"

namespace saber {

struct RunOptions {
    std::string run_id = "run";
    // Seeds the `random` baseline; other samplers are deterministic.
    std::uint64_t seed = 0;
    // Extra fields merged into the run_meta event (effective config, oracle target, ...).
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

struct GenerationResult {
    SequenceState final_state;
    std::size_t steps_used = 0;
    std::size_t backend_calls = 0;
    std::size_t remask_count = 0;
    std::size_t fallback_count = 0;
    bool completed = false;
    std::string trace_id;
    Trace trace;
};

/// A backend failure ended the run; the partial trace (closed with a run_end
/// event carrying the error) travels with the exception.
class AbortedRunError : public Error {
public:
    AbortedRunError(const std::string &message, Trace partial, std::optional<BackendErrorKind> kind)
        : Error(message), m_trace(std::move(partial)), m_kind(kind) {}

    const Trace &partial_trace() const { return m_trace; }
    // Set when the cause was a BackendError.
    std::optional<BackendErrorKind> backend_kind() const { return m_kind; }

private:
    Trace m_trace;
    std::optional<BackendErrorKind> m_kind;
};

/// Steps `strategy` until every position is unmasked or the step cap
/// ceil(cfg.step_cap_factor * L) is reached. For saber, backtracking is
/// suspended for the rest of the run after kStallStepsBeforeSuspend
/// consecutive steps of net progress below cfg.min_net_progress.
GenerationResult generate(SequenceState state, const Backend &backend, const SaberConfig &cfg,
                          const SamplerId &strategy, const RunOptions &options = {});

/// Semi-autoregressive decoding: blocks of `block_length` are finished left to
/// right, drafting only inside [0, block end).
GenerationResult sar_generate(SequenceState state, const Backend &backend, const SaberConfig &cfg,
                              std::size_t block_length, const SamplerId &inner, const RunOptions &options = {});

nlohmann::ordered_json to_json(const SaberConfig &cfg);

} // namespace saber
