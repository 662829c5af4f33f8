// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <utility>
#include <vector>

#include "saber/backend.hpp"
#include "saber/oracle.hpp"

namespace saber::testing {

inline const VocabSpec kVocab{64, 63};

/// Builds a prediction set shaped for `state` from per-position top_prob
/// values; cur_prob for unmasked positions comes from `cur` (default 0.5).
inline PredictionSet make_preds(const SequenceState &state, const std::vector<double> &top_probs,
                                const std::vector<double> &cur = {}) {
    PredictionSet p;
    p.positions.resize(state.length());
    for (std::size_t i = 0; i < state.length(); ++i) {
        auto &pos = p.positions[i];
        pos.top_token = static_cast<TokenId>(i % 60 + 1);
        pos.top_prob = top_probs.at(i);
        pos.entropy = binary_entropy(pos.top_prob);
        if (!state.is_masked(i)) {
            pos.cur_prob = cur.empty() ? 0.5 : cur.at(i);
        }
    }
    return p;
}

/// Computes predictions with a user function; counts calls.
class FunctionBackend final : public Backend {
public:
    using Fn = std::function<PredictionSet(const SequenceState &, std::size_t call)>;

    explicit FunctionBackend(Fn fn, bool scores_unmasked = true) : m_fn(std::move(fn)), m_scores(scores_unmasked) {}

    PredictionSet predict(const SequenceState &state) const override { return m_fn(state, m_calls++); }
    bool scores_unmasked() const override { return m_scores; }
    std::string name() const override { return "function"; }

    std::size_t calls() const { return m_calls; }

private:
    Fn m_fn;
    bool m_scores;
    mutable std::atomic<std::size_t> m_calls{0};
};

/// Returns a fixed queue of prediction sets, one per call.
inline FunctionBackend queue_backend(std::vector<PredictionSet> sets) {
    auto shared = std::make_shared<std::vector<PredictionSet>>(std::move(sets));
    return FunctionBackend([shared](const SequenceState &, std::size_t call) {
        if (call >= shared->size()) {
            throw std::logic_error("scripted backend exhausted");
        }
        return (*shared)[call];
    });
}

enum class Adversary {
    none,          // hashed pseudo-random confidences
    single_draft,  // exactly one masked position is ever confident
    all_drops,     // every unmasked token loses confidence on every re-score
    single_and_drops,
};

/// Deterministic pseudo-random model: every field is a hash of (seed, position,
/// token currently written there, number of unmasked positions).
class HashedBackend final : public Backend {
public:
    HashedBackend(std::uint64_t seed, Adversary mode, VocabSpec vocab = kVocab)
        : m_seed(seed), m_mode(mode), m_vocab(vocab) {}

    PredictionSet predict(const SequenceState &state) const override {
        PredictionSet p;
        p.positions.resize(state.length());
        const auto filled = static_cast<std::uint64_t>(state.unmasked_count());
        std::size_t first_masked = state.length();
        for (std::size_t i = 0; i < state.length(); ++i) {
            if (state.is_masked(i)) {
                first_masked = i;
                break;
            }
        }
        for (std::size_t i = 0; i < state.length(); ++i) {
            const auto h = mix64(m_seed ^ mix64(i * 0x100000001b3ULL + filled) ^
                                 mix64(static_cast<std::uint64_t>(state.gen()[i]) + 17));
            auto &pos = p.positions[i];
            pos.top_token = static_cast<TokenId>(h % static_cast<std::uint64_t>(m_vocab.size - 1));
            if (pos.top_token == m_vocab.mask_id) {
                pos.top_token = (pos.top_token + 1) % static_cast<TokenId>(m_vocab.size - 1);
            }
            const double u = static_cast<double>((h >> 11) & 0xfffff) / static_cast<double>(0x100000);
            pos.top_prob = 0.05 + 0.95 * u;
            if (m_mode == Adversary::single_draft || m_mode == Adversary::single_and_drops) {
                pos.top_prob = i == first_masked ? 1.0 : 0.01;
            }
            pos.entropy = binary_entropy(pos.top_prob);
            if (!state.is_masked(i)) {
                const double v = static_cast<double>((h >> 33) & 0xffff) / static_cast<double>(0x10000);
                pos.cur_prob = (m_mode == Adversary::all_drops || m_mode == Adversary::single_and_drops) ? 0.0 : v;
            }
        }
        return p;
    }
    std::string name() const override { return "hashed"; }

private:
    std::uint64_t m_seed;
    Adversary m_mode;
    VocabSpec m_vocab;
};

} // namespace saber::testing
