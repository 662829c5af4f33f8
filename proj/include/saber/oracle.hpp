// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "saber/backend.hpp"

namespace saber {

/// Parameters of the synthetic denoiser.
///
/// A masked position's confidence grows linearly from base_conf to 1 with the
/// fraction of correct unmasked neighbours within `window`. A seeded subset of
/// positions (rate deceive_rate) is "deceptive": while less than half of its
/// neighbourhood is correct it proposes a wrong token at deceive_conf.
struct OracleParams {
    std::vector<TokenId> target;
    std::size_t window = 2;
    double base_conf = 0.5;
    double deceive_rate = 0.0;
    double deceive_conf = 0.9;
    std::uint64_t seed = 0;

    // Throws InputError on an out-of-range field.
    void validate(const VocabSpec &vocab) const;
};

class OracleBackend final : public Backend {
public:
    OracleBackend(OracleParams params, VocabSpec vocab);

    PredictionSet predict(const SequenceState &state) const override;
    std::string name() const override { return "oracle"; }

    const OracleParams &params() const { return m_params; }
    bool is_deceptive(std::size_t index) const;
    // Seeded wrong token for a deceptive position: never the target nor the mask.
    TokenId decoy_token(std::size_t index) const;

private:
    OracleParams m_params;
    VocabSpec m_vocab;
};

PredictionSet oracle_predict(const OracleParams &params, const SequenceState &state);

/// Deterministic target sequence of `length` non-mask tokens drawn from `vocab`.
std::vector<TokenId> make_oracle_target(std::size_t length, const VocabSpec &vocab, std::uint64_t seed);

/// SplitMix64 finaliser; the oracle keys all of its randomness on it.
std::uint64_t mix64(std::uint64_t x);

} // namespace saber
