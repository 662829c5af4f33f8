// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdlib>
#include <random>

#include <gtest/gtest.h>

#include "saber/errors.hpp"
#include "saber/experiment.hpp"
#include "saber/generation.hpp"
#include "saber/oracle.hpp"
#include "saber/remote_backend.hpp"

namespace saber {
namespace {

const VocabSpec kVocab{100, 99};

OracleParams params(std::size_t length, std::size_t window, double base, double rate = 0.0, double dc = 0.9) {
    OracleParams p;
    p.target = make_oracle_target(length, kVocab, 3);
    p.window = window;
    p.base_conf = base;
    p.deceive_rate = rate;
    p.deceive_conf = dc;
    p.seed = 11;
    return p;
}

// Brute-force restatement of the honest confidence: scan every index j and
// keep the ones within the window.
double honest_reference(const OracleParams &p, const SequenceState &s, std::size_t i, std::size_t *correct_out) {
    std::size_t slots = 0, correct = 0;
    for (std::size_t j = 0; j < s.length(); ++j) {
        const auto dist = static_cast<std::size_t>(std::llabs(static_cast<long long>(j) - static_cast<long long>(i)));
        if (j == i || dist > p.window) continue;
        ++slots;
        if (!s.is_masked(j) && s.gen()[j] == p.target[j]) ++correct;
    }
    if (correct_out) *correct_out = correct;
    const double ratio = slots ? double(correct) / double(slots) : 0.0;
    return p.base_conf + (1.0 - p.base_conf) * ratio;
}

TEST(OracleTest, ConfidenceAtNoCorrectNeighbours) {
    auto p = params(8, 2, 0.5);
    auto s = new_sequence({}, 8, kVocab);
    auto preds = oracle_predict(p, s);
    EXPECT_DOUBLE_EQ(preds[4].top_prob, 0.5);
    EXPECT_EQ(preds[4].top_token, p.target[4]);
}

TEST(OracleTest, ConfidenceWithAllNeighboursCorrect) {
    auto p = params(8, 2, 0.5);
    auto s = new_sequence({}, 8, kVocab);
    for (std::size_t j : {2, 3, 5, 6}) apply_unmask(s, j, p.target[j], 0.5);
    EXPECT_DOUBLE_EQ(oracle_predict(p, s)[4].top_prob, 1.0);
}

TEST(OracleTest, BoundaryClipsNeighbourSlots) {
    auto p = params(5, 2, 0.5);
    auto s = new_sequence({}, 5, kVocab);
    apply_unmask(s, 1, p.target[1], 0.5);
    // Position 0 has only two in-range neighbour slots; one is correct.
    EXPECT_DOUBLE_EQ(oracle_predict(p, s)[0].top_prob, 0.75);
    apply_unmask(s, 2, p.target[2], 0.5);
    EXPECT_DOUBLE_EQ(oracle_predict(p, s)[0].top_prob, 1.0);
}

TEST(OracleTest, DeceptiveTokenCollapsesOnceContextIsCorrect) {
    auto p = params(9, 2, 0.5, 0.5, 0.9);
    std::size_t i = 7;
    for (p.seed = 0; i == 7; ++p.seed) {
        OracleBackend probe(p, kVocab);
        for (i = 2; i < 7 && !probe.is_deceptive(i); ++i) {
        }
    }
    --p.seed;
    OracleBackend oracle(p, kVocab);
    ASSERT_TRUE(oracle.is_deceptive(i));

    auto s = new_sequence({}, 9, kVocab);
    auto first = oracle.predict(s);
    EXPECT_EQ(first[i].top_token, oracle.decoy_token(i));
    EXPECT_NE(first[i].top_token, p.target[i]);
    EXPECT_DOUBLE_EQ(first[i].top_prob, 0.9);

    apply_unmask(s, i, first[i].top_token, 0.9);
    for (std::size_t j : {i - 2, i - 1, i + 1, i + 2}) apply_unmask(s, j, p.target[j], 0.5);
    // k = n = 4: honest probability 1, so the decoy's probability is (1 - 1) / 5 = 0.
    const auto later = oracle.predict(s);
    ASSERT_TRUE(later[i].cur_prob.has_value());
    EXPECT_DOUBLE_EQ(*later[i].cur_prob, 0.0);
    EXPECT_LT(*later[i].cur_prob, 0.25);
}

TEST(OracleTest, ContractShape) {
    auto p = params(6, 2, 0.4);
    auto s = new_sequence({}, 6, kVocab);
    for (const auto &pos : oracle_predict(p, s).positions) {
        EXPECT_FALSE(pos.cur_prob.has_value());
    }
    for (std::size_t j = 0; j < 6; ++j) apply_unmask(s, j, p.target[j], 0.5);
    const auto full = oracle_predict(p, s);
    for (const auto &pos : full.positions) {
        EXPECT_TRUE(pos.cur_prob.has_value());
    }
    EXPECT_NO_THROW(check_predictions(full, s));
}

TEST(OracleTest, LengthMismatchIsAnInputError) {
    auto p = params(6, 2, 0.4);
    EXPECT_THROW(oracle_predict(p, new_sequence({}, 5, kVocab)), InputError);
}

TEST(OracleTest, ValidatesParameters) {
    auto p = params(6, 2, 0.4);
    p.deceive_conf = 0.3;
    EXPECT_THROW(OracleBackend(p, kVocab), InputError);
    p = params(6, 0, 0.4);
    EXPECT_THROW(OracleBackend(p, kVocab), InputError);
    p = params(6, 2, 1.0);
    EXPECT_THROW(OracleBackend(p, kVocab), InputError);
}

TEST(OracleTest, EntropyIsTheTwoMassSurrogate) {
    EXPECT_DOUBLE_EQ(binary_entropy(1.0), 0.0);
    EXPECT_NEAR(binary_entropy(0.5), std::log(2.0), 1e-15);
    EXPECT_NEAR(binary_entropy(0.9), -0.9 * std::log(0.9) - 0.1 * std::log(0.1), 1e-15);
}

// Random partial states: honest fields agree with the brute-force reference,
// wrong tokens score (1 - honest) / (k + 1), predictions are reproducible and
// serialise identically, and honest confidence never falls as k grows.
TEST(OracleProperty, MatchesReferenceAndIsDeterministic) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng() % 30;
        auto p = params(n, 1 + rng() % 4, 0.2 + 0.5 * double(rng() % 100) / 100.0, 0.3, 0.95);
        p.seed = rng();
        OracleBackend oracle(p, kVocab);
        auto s = new_sequence({}, n, kVocab);
        for (std::size_t j = 0; j < n; ++j) {
            const auto roll = rng() % 3;
            if (roll == 1) apply_unmask(s, j, p.target[j], 0.5);
            if (roll == 2) apply_unmask(s, j, (p.target[j] + 1) % 99, 0.5);
        }
        const auto preds = oracle.predict(s);
        EXPECT_EQ(encode_predict_response(preds), encode_predict_response(oracle.predict(s)));
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t k = 0;
            const double honest = honest_reference(p, s, i, &k);
            const auto &pos = preds[i];
            EXPECT_NEAR(pos.entropy, binary_entropy(pos.top_prob), 1e-15);
            if (!oracle.is_deceptive(i)) {
                EXPECT_NEAR(pos.top_prob, honest, 1e-15);
                EXPECT_EQ(pos.top_token, p.target[i]);
            }
            if (!s.is_masked(i)) {
                const double expected = s.gen()[i] == p.target[i] ? honest : (1.0 - honest) / double(k + 1);
                EXPECT_NEAR(*pos.cur_prob, expected, 1e-15);
            }
            // Monotone in k: fill one more masked neighbour correctly.
            for (std::size_t j = (i >= p.window ? i - p.window : 0); j <= std::min(n - 1, i + p.window); ++j) {
                if (j != i && s.is_masked(j) && !oracle.is_deceptive(i)) {
                    auto more = unmasked(s, j, p.target[j], 0.5);
                    EXPECT_GE(oracle.predict(more)[i].top_prob, pos.top_prob);
                    break;
                }
            }
        }
    }
}

// Deceptive positions are monotone too once deceive_conf does not exceed the
// honest confidence at the half-correct switch point, (1 + base) / 2.
TEST(OracleProperty, DeceptivePositionsMonotoneUnderDefaultFixture) {
    ExperimentConfig config;
    config.gen_length = 32;
    config.oracle.deceive_rate = 0.5;
    ASSERT_LE(config.oracle.deceive_conf, (1.0 + config.oracle.base_conf) / 2.0);
    const auto p = oracle_params_for(config, 9);
    OracleBackend oracle(p, {config.oracle.vocab_size, config.oracle.mask_id});
    auto s = new_sequence({}, 32, {config.oracle.vocab_size, config.oracle.mask_id});
    std::vector<double> last(32, 0.0);
    for (std::size_t j = 0; j < 32; j += 2) {
        const auto preds = oracle.predict(s);
        for (std::size_t i = 0; i < 32; ++i) {
            if (s.is_masked(i)) {
                EXPECT_GE(preds[i].top_prob, last[i]) << "position " << i;
                last[i] = preds[i].top_prob;
            }
        }
        apply_unmask(s, j, p.target[j], 0.5);
    }
}

TEST(OracleProperty, CommittedDecoysLoseConfidenceOnStandardFixture) {
    ExperimentConfig config;
    config.gen_length = 64;
    const auto record = run_experiment(config, resolve_strategy("confidence", config), 1);
    const auto &final_state = record.result.final_state;
    OracleBackend oracle(oracle_params_for(config, 1), {config.oracle.vocab_size, config.oracle.mask_id});
    const auto preds = oracle.predict(final_state);
    double largest = 0.0;
    for (const auto &[j, committed] : final_state.ledger()) {
        largest = std::max(largest, committed - *preds[j].cur_prob);
    }
    EXPECT_GT(largest, 0.3);
}

TEST(OracleTest, TargetNeverContainsMask) {
    const auto t = make_oracle_target(500, VocabSpec{3, 1}, 42);
    for (TokenId tok : t) EXPECT_NE(tok, 1);
}

} // namespace
} // namespace saber
