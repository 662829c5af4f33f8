// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "saber/core_state.hpp"

namespace saber {

/// Sufficient statistics of one position's predictive distribution.
struct PositionPrediction {
    TokenId top_token = 0;
    double top_prob = 0.0;
    // Probability of the token currently written here; set only for unmasked positions.
    std::optional<double> cur_prob;
    // Shannon entropy in nats.
    double entropy = 0.0;

    bool operator==(const PositionPrediction &) const = default;
};

/// One prediction per generation-region index, indexed by position.
struct PredictionSet {
    std::vector<PositionPrediction> positions;

    std::size_t size() const { return positions.size(); }
    const PositionPrediction &operator[](std::size_t index) const { return positions[index]; }

    bool operator==(const PredictionSet &) const = default;
};

/// Throws ContractError if `preds` does not cover `state` with the expected
/// masked/unmasked shape, or carries probabilities outside their ranges.
void check_predictions(const PredictionSet &preds, const SequenceState &state);

/// Stand-in for the denoising model. Implementations must allow concurrent
/// predict() calls from independent runs.
class Backend {
public:
    virtual ~Backend() = default;

    virtual PredictionSet predict(const SequenceState &state) const = 0;

    // False for backends that cannot score tokens at unmasked positions;
    // backtracking refuses to run on those.
    virtual bool scores_unmasked() const { return true; }

    virtual std::string name() const = 0;
};

/// Two-mass entropy surrogate, -p ln p - (1-p) ln(1-p), with 0 ln 0 = 0.
double binary_entropy(double p);

} // namespace saber
