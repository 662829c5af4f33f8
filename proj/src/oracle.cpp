// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#include "saber/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "saber/errors.hpp"

namespace saber {

double binary_entropy(double p) {
    auto term = [](double x) { return x > 0.0 ? -x * std::log(x) : 0.0; };
    return term(p) + term(1.0 - p);
}

void check_predictions(const PredictionSet &preds, const SequenceState &state) {
    if (preds.size() != state.length()) {
        throw ContractError("prediction set covers " + std::to_string(preds.size()) + " positions, expected " +
                            std::to_string(state.length()));
    }
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto &p = preds[i];
        const std::string where = " at position " + std::to_string(i);
        if (!(p.top_prob > 0.0 && p.top_prob <= 1.0)) {
            throw ContractError("top_prob outside (0,1]" + where);
        }
        if (!(p.entropy >= 0.0)) {
            throw ContractError("negative entropy" + where);
        }
        if (!state.vocab().contains(p.top_token) || p.top_token == state.vocab().mask_id) {
            throw ContractError("top_token " + std::to_string(p.top_token) + " not a generatable token" + where);
        }
        if (state.is_masked(i) && p.cur_prob) {
            throw ContractError("cur_prob present for masked position" + where);
        }
        if (p.cur_prob && !(*p.cur_prob >= 0.0 && *p.cur_prob <= 1.0)) {
            throw ContractError("cur_prob outside [0,1]" + where);
        }
    }
}

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

namespace {

// Uniform in [0,1) from the top 53 bits.
double unit_interval(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

// Draws a token that is neither `avoid_a` nor `avoid_b`; vocab.size >= 3 is checked upstream.
TokenId draw_token(std::uint64_t bits, const VocabSpec &vocab, TokenId avoid_a, TokenId avoid_b) {
    const auto size = static_cast<std::uint64_t>(vocab.size);
    for (std::uint64_t attempt = 0;; ++attempt) {
        const auto candidate = static_cast<TokenId>(mix64(bits + attempt) % size);
        if (candidate != avoid_a && candidate != avoid_b) {
            return candidate;
        }
    }
}

constexpr std::uint64_t kDeceiveSalt = 0xd1b54a32d192ed03ULL;
constexpr std::uint64_t kDecoySalt = 0x8cb92ba72f3d8dd7ULL;

} // namespace

void OracleParams::validate(const VocabSpec &vocab) const {
    vocab.validate();
    if (vocab.size < 3) {
        throw InputError("oracle needs a vocab of at least 3 tokens to plant decoys");
    }
    if (target.empty()) {
        throw InputError("oracle target must be non-empty");
    }
    for (TokenId t : target) {
        if (!vocab.contains(t) || t == vocab.mask_id) {
            throw InputError("oracle target token " + std::to_string(t) + " is not generatable");
        }
    }
    if (window == 0) {
        throw InputError("oracle window must be >= 1");
    }
    if (!(base_conf > 0.0 && base_conf < 1.0)) {
        throw InputError("base_conf must lie in (0,1)");
    }
    if (!(deceive_rate >= 0.0 && deceive_rate < 1.0)) {
        throw InputError("deceive_rate must lie in [0,1)");
    }
    if (!(deceive_conf > base_conf && deceive_conf < 1.0)) {
        throw InputError("deceive_conf must lie in (base_conf, 1)");
    }
}

OracleBackend::OracleBackend(OracleParams params, VocabSpec vocab) : m_params(std::move(params)), m_vocab(vocab) {
    m_params.validate(m_vocab);
}

bool OracleBackend::is_deceptive(std::size_t index) const {
    if (m_params.deceive_rate <= 0.0) {
        return false;
    }
    return unit_interval(mix64(m_params.seed ^ kDeceiveSalt ^ mix64(index))) < m_params.deceive_rate;
}

TokenId OracleBackend::decoy_token(std::size_t index) const {
    return draw_token(mix64(m_params.seed ^ kDecoySalt ^ mix64(index)), m_vocab, m_params.target.at(index),
                      m_vocab.mask_id);
}

PredictionSet OracleBackend::predict(const SequenceState &state) const {
    const auto &gen = state.gen();
    const auto &target = m_params.target;
    if (gen.size() != target.size()) {
        throw InputError("oracle target has length " + std::to_string(target.size()) + " but sequence has " +
                         std::to_string(gen.size()));
    }
    if (state.vocab() != m_vocab) {
        throw InputError("sequence vocab differs from the oracle's");
    }
    const std::size_t length = gen.size();
    const std::size_t w = m_params.window;

    PredictionSet out;
    out.positions.resize(length);
    for (std::size_t i = 0; i < length; ++i) {
        const std::size_t lo = i >= w ? i - w : 0;
        const std::size_t hi = std::min(length - 1, i + w);
        std::size_t slots = 0;
        std::size_t correct = 0;
        for (std::size_t j = lo; j <= hi; ++j) {
            if (j == i) {
                continue;
            }
            ++slots;
            if (gen[j] != m_vocab.mask_id && gen[j] == target[j]) {
                ++correct;
            }
        }
        const double ratio = slots ? static_cast<double>(correct) / static_cast<double>(slots) : 0.0;
        const double honest = m_params.base_conf + (1.0 - m_params.base_conf) * ratio;

        auto &pred = out.positions[i];
        if (is_deceptive(i) && ratio < 0.5) {
            pred.top_token = decoy_token(i);
            pred.top_prob = m_params.deceive_conf;
        } else {
            pred.top_token = target[i];
            pred.top_prob = honest;
        }
        pred.entropy = binary_entropy(pred.top_prob);
        if (gen[i] != m_vocab.mask_id) {
            pred.cur_prob = gen[i] == target[i] ? honest : (1.0 - honest) / static_cast<double>(correct + 1);
        }
    }
    return out;
}

PredictionSet oracle_predict(const OracleParams &params, const SequenceState &state) {
    return OracleBackend(params, state.vocab()).predict(state);
}

std::vector<TokenId> make_oracle_target(std::size_t length, const VocabSpec &vocab, std::uint64_t seed) {
    vocab.validate();
    std::vector<TokenId> target(length);
    for (std::size_t i = 0; i < length; ++i) {
        target[i] = draw_token(mix64(seed ^ mix64(i + 0x51ed2701ULL)), vocab, vocab.mask_id, vocab.mask_id);
    }
    return target;
}

} // namespace saber
