// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#include "saber/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <sstream>

#include "saber/errors.hpp"

namespace saber {

using nlohmann::json;
using nlohmann::ordered_json;

const char *to_string(EventKind kind) {
    switch (kind) {
    case EventKind::run_meta: return "run_meta";
    case EventKind::threshold: return "threshold";
    case EventKind::fallback: return "fallback";
    case EventKind::unmask: return "unmask";
    case EventKind::remask: return "remask";
    case EventKind::run_end: return "run_end";
    }
    return "unknown";
}

namespace {

std::optional<EventKind> parse_kind(std::string_view text) {
    for (auto kind : {EventKind::run_meta, EventKind::threshold, EventKind::fallback, EventKind::unmask,
                      EventKind::remask, EventKind::run_end}) {
        if (text == to_string(kind)) {
            return kind;
        }
    }
    return std::nullopt;
}

} // namespace

double round_sig9(double x) {
    if (!std::isfinite(x)) {
        return x;
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return std::strtod(buf, nullptr);
}

TraceEvent TraceEvent::unmask(std::size_t step, std::size_t index, TokenId token, double confidence) {
    TraceEvent e;
    e.step = step;
    e.kind = EventKind::unmask;
    e.index = index;
    e.token = token;
    e.confidence = round_sig9(confidence);
    return e;
}

TraceEvent TraceEvent::remask(std::size_t step, std::size_t index, double drop) {
    TraceEvent e;
    e.step = step;
    e.kind = EventKind::remask;
    e.index = index;
    e.confidence = round_sig9(drop);
    return e;
}

TraceEvent TraceEvent::threshold(std::size_t step, double tau) {
    TraceEvent e;
    e.step = step;
    e.kind = EventKind::threshold;
    e.value = round_sig9(tau);
    return e;
}

TraceEvent TraceEvent::fallback(std::size_t step, std::size_t index) {
    TraceEvent e;
    e.step = step;
    e.kind = EventKind::fallback;
    e.index = index;
    return e;
}

TraceEvent TraceEvent::run_meta(std::size_t step, ordered_json meta) {
    TraceEvent e;
    e.step = step;
    e.kind = EventKind::run_meta;
    e.meta = std::move(meta);
    return e;
}

TraceEvent TraceEvent::run_end(std::size_t step, ordered_json meta) {
    TraceEvent e;
    e.step = step;
    e.kind = EventKind::run_end;
    e.meta = std::move(meta);
    return e;
}

void Trace::record(TraceEvent event) {
    if (!m_events.empty() && event.step < m_events.back().step) {
        throw ContractError("trace event for step " + std::to_string(event.step) + " recorded after step " +
                            std::to_string(m_events.back().step));
    }
    if (event.kind == EventKind::run_meta && run_meta()) {
        throw ContractError("trace already carries a run_meta event");
    }
    if (event.kind == EventKind::run_end && run_end()) {
        throw ContractError("trace already carries a run_end event");
    }
    m_events.push_back(std::move(event));
}

const TraceEvent *Trace::run_meta() const {
    for (const auto &e : m_events) {
        if (e.kind == EventKind::run_meta) {
            return &e;
        }
    }
    return nullptr;
}

const TraceEvent *Trace::run_end() const {
    for (auto it = m_events.rbegin(); it != m_events.rend(); ++it) {
        if (it->kind == EventKind::run_end) {
            return &*it;
        }
    }
    return nullptr;
}

std::string event_to_json_line(const TraceEvent &event) {
    ordered_json j;
    j["step"] = event.step;
    j["kind"] = to_string(event.kind);
    if (event.index) j["index"] = *event.index;
    if (event.token) j["token"] = *event.token;
    if (event.confidence) j["confidence"] = round_sig9(*event.confidence);
    if (event.value) j["value"] = round_sig9(*event.value);
    if (!event.meta.is_null()) j["meta"] = event.meta;
    return j.dump();
}

std::string Trace::to_jsonl() const {
    std::string out;
    for (const auto &e : m_events) {
        out += event_to_json_line(e);
        out += '\n';
    }
    return out;
}

void Trace::write_jsonl(const std::filesystem::path &path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open trace file " + path.string() + " for writing");
    }
    out << to_jsonl();
    if (!out) {
        throw Error("failed writing trace file " + path.string());
    }
}

Trace Trace::parse_jsonl(std::istream &in) {
    Trace trace;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (in.eof()) {
            // getline hit EOF before a newline: the writer always terminates lines.
            if (line.empty()) {
                break;
            }
            throw CorruptTraceError("unterminated final line (truncated trace?)", line_no);
        }
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const json::parse_error &e) {
            throw CorruptTraceError(std::string("invalid JSON: ") + e.what(), line_no);
        }
        try {
            if (!j.is_object()) {
                throw CorruptTraceError("event is not a JSON object", line_no);
            }
            TraceEvent e;
            if (!j.contains("step") || !j["step"].is_number_unsigned()) {
                throw CorruptTraceError("missing or invalid 'step'", line_no);
            }
            e.step = j["step"].get<std::size_t>();
            const auto kind = j.contains("kind") && j["kind"].is_string()
                                  ? parse_kind(j["kind"].get<std::string>())
                                  : std::nullopt;
            if (!kind) {
                throw CorruptTraceError("missing or unknown 'kind'", line_no);
            }
            e.kind = *kind;
            if (j.contains("index")) e.index = j["index"].get<std::size_t>();
            if (j.contains("token")) e.token = j["token"].get<TokenId>();
            if (j.contains("confidence")) e.confidence = j["confidence"].get<double>();
            if (j.contains("value")) e.value = j["value"].get<double>();
            if (j.contains("meta")) e.meta = j["meta"];

            const bool needs_index = e.kind == EventKind::unmask || e.kind == EventKind::remask ||
                                     e.kind == EventKind::fallback;
            if (needs_index && !e.index) {
                throw CorruptTraceError(std::string(to_string(e.kind)) + " event without 'index'", line_no);
            }
            if (e.kind == EventKind::unmask && (!e.token || !e.confidence)) {
                throw CorruptTraceError("unmask event without 'token' or 'confidence'", line_no);
            }
            trace.record(std::move(e));
        } catch (const ContractError &err) {
            throw CorruptTraceError(err.what(), line_no);
        } catch (const json::exception &err) {
            throw CorruptTraceError(std::string("field of wrong type: ") + err.what(), line_no);
        }
    }
    return trace;
}

Trace Trace::read_jsonl(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CorruptTraceError("cannot open trace file " + path.string());
    }
    return parse_jsonl(in);
}

SequenceState replay(const Trace &trace, std::size_t gen_length, const VocabSpec &vocab,
                     std::span<const TokenId> prompt) {
    SequenceState state = new_sequence(prompt, gen_length, vocab);
    std::size_t line = 0;
    for (const auto &e : trace.events()) {
        ++line;
        if (e.kind != EventKind::unmask && e.kind != EventKind::remask) {
            continue;
        }
        while (state.step() < e.step) {
            advance_step(state);
        }
        try {
            if (e.kind == EventKind::unmask) {
                apply_unmask(state, *e.index, *e.token, *e.confidence);
            } else {
                apply_remask(state, *e.index);
            }
        } catch (const Error &err) {
            throw CorruptTraceError(std::string(to_string(e.kind)) + " rejected: " + err.what(), line);
        }
    }
    std::size_t final_step = state.step();
    if (const auto *end = trace.run_end()) {
        final_step = std::max(final_step, end->step);
    } else {
        for (const auto &e : trace.events()) {
            if (e.kind == EventKind::unmask) {
                final_step = std::max(final_step, e.step + 1);
            }
        }
    }
    while (state.step() < final_step) {
        advance_step(state);
    }
    return state;
}

SequenceState replay(const Trace &trace) {
    const auto *meta = trace.run_meta();
    if (!meta) {
        throw CorruptTraceError("trace has no run_meta event");
    }
    try {
        const auto &m = meta->meta;
        VocabSpec vocab{m.at("vocab_size").get<std::int64_t>(), m.at("mask_id").get<TokenId>()};
        const auto prompt = m.at("prompt").get<std::vector<TokenId>>();
        return replay(trace, m.at("gen_length").get<std::size_t>(), vocab, prompt);
    } catch (const json::exception &e) {
        throw CorruptTraceError(std::string("run_meta lacks sequence metadata: ") + e.what(), 1);
    } catch (const InputError &e) {
        throw CorruptTraceError(std::string("run_meta describes an invalid sequence: ") + e.what(), 1);
    }
}

bool replay_equivalent(const SequenceState &a, const SequenceState &b, double tolerance) {
    if (a.prompt() != b.prompt() || a.gen() != b.gen() || a.step() != b.step() || a.vocab() != b.vocab() ||
        a.ledger().size() != b.ledger().size()) {
        return false;
    }
    auto it = b.ledger().begin();
    for (const auto &[i, c] : a.ledger()) {
        if (it->first != i || std::abs(it->second - c) > tolerance) {
            return false;
        }
        ++it;
    }
    return true;
}

ordered_json RunMetrics::to_json() const {
    ordered_json j;
    j["steps_used"] = steps_used;
    j["backend_calls"] = backend_calls;
    j["mean_tokens_per_step"] = round_sig9(mean_tokens_per_step);
    j["unmask_count"] = unmask_count;
    j["remask_count"] = remask_count;
    j["fallback_count"] = fallback_count;
    j["completed"] = completed;
    ordered_json series = ordered_json::array();
    for (double c : per_step_mean_confidence) {
        series.push_back(round_sig9(c));
    }
    j["per_step_mean_confidence"] = std::move(series);
    j["token_error_rate"] = token_error_rate ? ordered_json(round_sig9(*token_error_rate)) : ordered_json(nullptr);
    return j;
}

double token_error_rate(const SequenceState &state, std::span<const TokenId> target) {
    if (target.size() != state.length()) {
        throw InputError("target length differs from sequence length");
    }
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        wrong += state.gen()[i] != target[i];
    }
    return static_cast<double>(wrong) / static_cast<double>(target.size());
}

RunMetrics metrics(const Trace &trace, std::optional<std::span<const TokenId>> target) {
    RunMetrics m;
    std::map<std::size_t, std::pair<double, std::size_t>> per_step;
    for (const auto &e : trace.events()) {
        switch (e.kind) {
        case EventKind::unmask: {
            ++m.unmask_count;
            auto &[sum, count] = per_step[e.step];
            sum += *e.confidence;
            ++count;
            break;
        }
        case EventKind::remask: ++m.remask_count; break;
        case EventKind::fallback: ++m.fallback_count; break;
        default: break;
        }
    }

    m.steps_used = per_step.empty() ? 0 : per_step.rbegin()->first + 1;
    const auto *end = trace.run_end();
    if (end && end->meta.is_object()) {
        m.steps_used = end->meta.value("steps_used", m.steps_used);
        m.backend_calls = end->meta.value("backend_calls", std::size_t{0});
        m.completed = end->meta.value("completed", false);
    }

    m.per_step_mean_confidence.assign(m.steps_used, 0.0);
    for (const auto &[step, acc] : per_step) {
        if (step < m.steps_used) {
            m.per_step_mean_confidence[step] = acc.first / static_cast<double>(acc.second);
        }
    }
    m.mean_tokens_per_step =
        m.steps_used ? static_cast<double>(m.unmask_count) / static_cast<double>(m.steps_used) : 0.0;

    std::vector<TokenId> meta_target;
    if (!target) {
        if (const auto *meta = trace.run_meta(); meta && meta->meta.contains("target")) {
            meta_target = meta->meta["target"].get<std::vector<TokenId>>();
            target = std::span<const TokenId>(meta_target);
        }
    }
    if (target) {
        std::map<std::size_t, TokenId> written;
        for (const auto &e : trace.events()) {
            if (e.kind == EventKind::unmask) {
                written[*e.index] = *e.token;
            } else if (e.kind == EventKind::remask) {
                written.erase(*e.index);
            }
        }
        std::size_t wrong = 0;
        for (std::size_t i = 0; i < target->size(); ++i) {
            auto it = written.find(i);
            wrong += it == written.end() || it->second != (*target)[i];
        }
        m.token_error_rate = target->empty() ? 0.0 : static_cast<double>(wrong) / static_cast<double>(target->size());
    }
    return m;
}

double spearman_vs_index(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n < 2) {
        return 0.0;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) {
            ++j;
        }
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    // Pearson correlation of value ranks against index ranks (0..n-1).
    const double mean = (static_cast<double>(n) - 1.0) / 2.0;
    double cov = 0.0, var_r = 0.0, var_i = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double di = static_cast<double>(i) - mean;
        const double dr = ranks[i] - mean;
        cov += di * dr;
        var_r += dr * dr;
        var_i += di * di;
    }
    if (var_r == 0.0) {
        return 0.0;
    }
    return cov / std::sqrt(var_r * var_i);
}

} // namespace saber
