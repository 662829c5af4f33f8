// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#include "saber/core_state.hpp"

#include <cmath>
#include <string>

#include "saber/errors.hpp"

namespace saber {

const char *to_string(BackendErrorKind kind) {
    switch (kind) {
    case BackendErrorKind::transport: return "transport error";
    case BackendErrorKind::timeout: return "timeout";
    case BackendErrorKind::status: return "server status error";
    case BackendErrorKind::schema: return "schema error";
    case BackendErrorKind::server: return "server error";
    }
    return "backend error";
}

void VocabSpec::validate() const {
    if (size < 2) {
        throw InputError("vocab size must be >= 2, got " + std::to_string(size));
    }
    if (!contains(mask_id)) {
        throw InputError("mask_id " + std::to_string(mask_id) + " outside vocab of size " + std::to_string(size));
    }
}

std::vector<std::size_t> SequenceState::unmasked_indices() const {
    std::vector<std::size_t> out;
    out.reserve(m_ledger.size());
    for (const auto &[index, _] : m_ledger) {
        out.push_back(index);
    }
    return out;
}

std::vector<std::size_t> SequenceState::masked_indices() const {
    std::vector<std::size_t> out;
    out.reserve(masked_count());
    for (std::size_t i = 0; i < m_gen.size(); ++i) {
        if (m_gen[i] == m_vocab.mask_id) {
            out.push_back(i);
        }
    }
    return out;
}

SequenceState new_sequence(std::span<const TokenId> prompt, std::size_t gen_length, const VocabSpec &vocab) {
    vocab.validate();
    if (gen_length == 0) {
        throw InputError("gen_length must be >= 1");
    }
    for (std::size_t i = 0; i < prompt.size(); ++i) {
        if (!vocab.contains(prompt[i])) {
            throw InputError("prompt token " + std::to_string(prompt[i]) + " at position " + std::to_string(i) +
                             " outside vocab of size " + std::to_string(vocab.size));
        }
    }
    SequenceState state;
    state.m_prompt.assign(prompt.begin(), prompt.end());
    state.m_gen.assign(gen_length, vocab.mask_id);
    state.m_vocab = vocab;
    return state;
}

void apply_unmask(SequenceState &state, std::size_t index, TokenId token, double confidence) {
    if (index >= state.m_gen.size()) {
        throw InputError("unmask index " + std::to_string(index) + " out of range");
    }
    if (token == state.m_vocab.mask_id) {
        throw InputError("cannot unmask position " + std::to_string(index) + " with the mask sentinel");
    }
    if (!state.m_vocab.contains(token)) {
        throw InputError("token " + std::to_string(token) + " outside vocab");
    }
    if (!(confidence >= 0.0 && confidence <= 1.0)) {
        throw InputError("confidence must lie in [0,1], got " + std::to_string(confidence));
    }
    if (state.m_gen[index] != state.m_vocab.mask_id) {
        throw StateError("position " + std::to_string(index) + " is already unmasked");
    }
    state.m_gen[index] = token;
    state.m_ledger.emplace(index, confidence);
}

void apply_remask(SequenceState &state, std::size_t index) {
    if (index >= state.m_gen.size()) {
        throw InputError("remask index " + std::to_string(index) + " out of range");
    }
    if (state.m_gen[index] == state.m_vocab.mask_id) {
        throw StateError("position " + std::to_string(index) + " is already masked");
    }
    state.m_gen[index] = state.m_vocab.mask_id;
    state.m_ledger.erase(index);
}

void advance_step(SequenceState &state) { ++state.m_step; }

SequenceState unmasked(SequenceState state, std::size_t index, TokenId token, double confidence) {
    apply_unmask(state, index, token, confidence);
    return state;
}

SequenceState remasked(SequenceState state, std::size_t index) {
    apply_remask(state, index);
    return state;
}

std::optional<double> compensated_mean(std::span<const double> values) {
    if (values.empty()) {
        return std::nullopt;
    }
    double sum = 0.0;
    double carry = 0.0;
    for (double v : values) {
        const double t = sum + v;
        if (std::fabs(sum) >= std::fabs(v)) {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    return (sum + carry) / static_cast<double>(values.size());
}

std::optional<double> ledger_mean(const SequenceState &state) {
    std::vector<double> values;
    values.reserve(state.ledger().size());
    for (const auto &[_, c] : state.ledger()) {
        values.push_back(c);
    }
    return compensated_mean(values);
}

} // namespace saber
