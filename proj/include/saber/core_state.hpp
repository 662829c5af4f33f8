// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace saber {

using TokenId = std::int32_t;

struct VocabSpec {
    std::int64_t size = 0;
    TokenId mask_id = 0;

    // Throws InputError unless size >= 2 and 0 <= mask_id < size.
    void validate() const;
    bool contains(TokenId id) const { return id >= 0 && id < size; }

    bool operator==(const VocabSpec &) const = default;
};

/// A fixed-length generation region behind an immutable prompt.
///
/// Indices are relative to the generation region. A position is unmasked iff
/// it holds a non-sentinel token, and every unmasked position carries exactly
/// one ledger entry: the confidence it was committed with. The only way to
/// change a state is through apply_unmask / apply_remask / advance_step.
class SequenceState {
public:
    SequenceState() = default;

    const std::vector<TokenId> &prompt() const { return m_prompt; }
    const std::vector<TokenId> &gen() const { return m_gen; }
    const VocabSpec &vocab() const { return m_vocab; }
    const std::map<std::size_t, double> &ledger() const { return m_ledger; }
    std::size_t step() const { return m_step; }

    std::size_t length() const { return m_gen.size(); }
    std::size_t unmasked_count() const { return m_ledger.size(); }
    std::size_t masked_count() const { return m_gen.size() - m_ledger.size(); }
    bool is_masked(std::size_t index) const { return m_gen.at(index) == m_vocab.mask_id; }
    bool complete() const { return masked_count() == 0; }

    // Ascending.
    std::vector<std::size_t> unmasked_indices() const;
    std::vector<std::size_t> masked_indices() const;

    bool operator==(const SequenceState &) const = default;

private:
    friend SequenceState new_sequence(std::span<const TokenId>, std::size_t, const VocabSpec &);
    friend void apply_unmask(SequenceState &, std::size_t, TokenId, double);
    friend void apply_remask(SequenceState &, std::size_t);
    friend void advance_step(SequenceState &);

    std::vector<TokenId> m_prompt;
    std::vector<TokenId> m_gen;
    VocabSpec m_vocab;
    std::map<std::size_t, double> m_ledger;
    std::size_t m_step = 0;
};

SequenceState new_sequence(std::span<const TokenId> prompt, std::size_t gen_length, const VocabSpec &vocab);

void apply_unmask(SequenceState &state, std::size_t index, TokenId token, double confidence);
void apply_remask(SequenceState &state, std::size_t index);
void advance_step(SequenceState &state);

// Value-returning forms, convenient in tests and replay.
SequenceState unmasked(SequenceState state, std::size_t index, TokenId token, double confidence);
SequenceState remasked(SequenceState state, std::size_t index);

/// Mean of the ledger confidences (compensated sum), or nullopt when empty.
std::optional<double> ledger_mean(const SequenceState &state);

/// Neumaier-compensated mean; nullopt for an empty range.
std::optional<double> compensated_mean(std::span<const double> values);

} // namespace saber
