// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <string>

#include "saber/backend.hpp"

namespace saber {

struct RemoteOptions {
    // Base URL, e.g. "http://127.0.0.1:8080".
    std::string url;
    std::string run_id;
    // Sent as "Authorization: Bearer <token>" when non-empty.
    std::string auth_token;
    std::chrono::milliseconds timeout{30000};
};

// Wire format of POST /v1/predict.
std::string encode_predict_request(const SequenceState &state, const std::string &run_id);

/// Parses and validates a /v1/predict response body against `state`.
/// Throws BackendError{schema} on any deviation from the wire schema.
PredictionSet decode_predict_response(const std::string &body, const SequenceState &state);

std::string encode_predict_response(const PredictionSet &preds);

class RemoteBackend final : public Backend {
public:
    explicit RemoteBackend(RemoteOptions options);

    PredictionSet predict(const SequenceState &state) const override;
    std::string name() const override { return "remote"; }

    const RemoteOptions &options() const { return m_options; }

private:
    RemoteOptions m_options;
    std::string m_scheme_host_port;
    std::string m_base_path;
};

} // namespace saber
