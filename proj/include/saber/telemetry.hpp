// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "saber/core_state.hpp"

namespace saber {

enum class EventKind { run_meta, threshold, fallback, unmask, remask, run_end };

const char *to_string(EventKind kind);

/// One sampling decision. Which optional fields are set depends on `kind`:
///   unmask    index, token, confidence (commit confidence)
///   remask    index, confidence (the drop that triggered it)
///   threshold value
///   fallback  index
///   run_meta  meta (run id, vocab, prompt, effective config)
///   run_end   meta (steps_used, backend_calls, completed, optional error)
struct TraceEvent {
    std::size_t step = 0;
    EventKind kind = EventKind::unmask;
    std::optional<std::size_t> index;
    std::optional<TokenId> token;
    std::optional<double> confidence;
    std::optional<double> value;
    nlohmann::ordered_json meta;

    static TraceEvent unmask(std::size_t step, std::size_t index, TokenId token, double confidence);
    static TraceEvent remask(std::size_t step, std::size_t index, double drop);
    static TraceEvent threshold(std::size_t step, double tau);
    static TraceEvent fallback(std::size_t step, std::size_t index);
    static TraceEvent run_meta(std::size_t step, nlohmann::ordered_json meta);
    static TraceEvent run_end(std::size_t step, nlohmann::ordered_json meta);

    bool operator==(const TraceEvent &) const = default;
};

/// Confidences and thresholds are written with 9 significant digits.
double round_sig9(double x);

/// Ordered event stream of one run.
class Trace {
public:
    // Throws ContractError if event.step is below the last recorded step, or
    // on a second run_meta.
    void record(TraceEvent event);

    const std::vector<TraceEvent> &events() const { return m_events; }
    bool empty() const { return m_events.empty(); }
    std::size_t size() const { return m_events.size(); }

    const TraceEvent *run_meta() const;
    const TraceEvent *run_end() const;

    // One JSON object per line, fixed field order, trailing newline.
    std::string to_jsonl() const;
    void write_jsonl(const std::filesystem::path &path) const;

    // Throws CorruptTraceError carrying the 1-based line of the first bad line.
    static Trace parse_jsonl(std::istream &in);
    static Trace read_jsonl(const std::filesystem::path &path);

    bool operator==(const Trace &) const = default;

private:
    std::vector<TraceEvent> m_events;
};

std::string event_to_json_line(const TraceEvent &event);

/// Rebuilds the final state by applying unmask/remask events in order.
/// Throws CorruptTraceError on an event the state rejects.
SequenceState replay(const Trace &trace, std::size_t gen_length, const VocabSpec &vocab,
                     std::span<const TokenId> prompt = {});

/// Same, reading length, vocab and prompt from the trace's run_meta event.
SequenceState replay(const Trace &trace);

/// Replay equality: tokens, unmasked set and step exactly, ledger confidences
/// within `tolerance` (traces keep 9 significant digits).
bool replay_equivalent(const SequenceState &a, const SequenceState &b, double tolerance = 1e-6);

struct RunMetrics {
    std::size_t steps_used = 0;
    std::size_t backend_calls = 0;
    double mean_tokens_per_step = 0.0;
    std::size_t unmask_count = 0;
    std::size_t remask_count = 0;
    std::size_t fallback_count = 0;
    bool completed = false;
    std::vector<double> per_step_mean_confidence;
    std::optional<double> token_error_rate;

    nlohmann::ordered_json to_json() const;
};

/// Aggregates a completed trace. The error rate is computed against `target`
/// when given, else against a "target" array in run_meta, else left absent.
RunMetrics metrics(const Trace &trace, std::optional<std::span<const TokenId>> target = std::nullopt);

/// Fraction of positions whose final token differs from the target.
double token_error_rate(const SequenceState &state, std::span<const TokenId> target);

/// Spearman rank correlation (average ranks for ties) between the values and
/// their positions 0..n-1. Returns 0 for fewer than two values or a constant series.
double spearman_vs_index(std::span<const double> values);

} // namespace saber
