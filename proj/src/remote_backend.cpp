// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#include "saber/remote_backend.hpp"

#include <regex>

#include <httplib.h>
#include <json.hpp>

#include "saber/errors.hpp"

namespace saber {

using nlohmann::json;
using nlohmann::ordered_json;

std::string encode_predict_request(const SequenceState &state, const std::string &run_id) {
    ordered_json body;
    body["prompt"] = state.prompt();
    body["gen"] = state.gen();
    body["mask_id"] = state.vocab().mask_id;
    body["run_id"] = run_id;
    return body.dump();
}

std::string encode_predict_response(const PredictionSet &preds) {
    ordered_json positions = ordered_json::array();
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto &p = preds[i];
        ordered_json item;
        item["index"] = i;
        item["top_token"] = p.top_token;
        item["top_prob"] = p.top_prob;
        item["cur_prob"] = p.cur_prob ? ordered_json(*p.cur_prob) : ordered_json(nullptr);
        item["entropy"] = p.entropy;
        positions.push_back(std::move(item));
    }
    ordered_json body;
    body["positions"] = std::move(positions);
    return body.dump();
}

namespace {

[[noreturn]] void schema_error(const std::string &message) { throw BackendError(BackendErrorKind::schema, message); }

const json &require(const json &obj, const char *key, const std::string &where) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        schema_error("missing field '" + std::string(key) + "'" + where);
    }
    return *it;
}

double require_probability(const json &obj, const char *key, const std::string &where) {
    const auto &v = require(obj, key, where);
    if (!v.is_number()) {
        schema_error("field '" + std::string(key) + "' is not a number" + where);
    }
    const double p = v.get<double>();
    if (!(p >= 0.0 && p <= 1.0)) {
        schema_error("field '" + std::string(key) + "' = " + v.dump() + " outside [0,1]" + where);
    }
    return p;
}

} // namespace

PredictionSet decode_predict_response(const std::string &body, const SequenceState &state) {
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::parse_error &e) {
        schema_error(std::string("response is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) {
        schema_error("response is not a JSON object");
    }
    if (doc.contains("error")) {
        throw BackendError(BackendErrorKind::server, doc["error"].is_string() ? doc["error"].get<std::string>()
                                                                              : doc["error"].dump());
    }
    const auto &positions = require(doc, "positions", "");
    if (!positions.is_array()) {
        schema_error("'positions' is not an array");
    }
    if (positions.size() != state.length()) {
        schema_error("expected " + std::to_string(state.length()) + " positions, got " +
                     std::to_string(positions.size()));
    }

    PredictionSet out;
    out.positions.resize(state.length());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const auto &item = positions[i];
        const std::string where = " in positions[" + std::to_string(i) + "]";
        if (!item.is_object()) {
            schema_error("entry is not an object" + where);
        }
        const auto &index = require(item, "index", where);
        if (!index.is_number_integer() || index.get<std::int64_t>() != static_cast<std::int64_t>(i)) {
            schema_error("positions must be sorted by index and cover 0..L-1" + where);
        }
        const auto &top_token = require(item, "top_token", where);
        if (!top_token.is_number_integer()) {
            schema_error("'top_token' is not an integer" + where);
        }
        const auto token = top_token.get<std::int64_t>();
        if (token < 0 || token >= state.vocab().size || token == state.vocab().mask_id) {
            schema_error("'top_token' " + std::to_string(token) + " is not a generatable token" + where);
        }

        auto &pred = out.positions[i];
        pred.top_token = static_cast<TokenId>(token);
        pred.top_prob = require_probability(item, "top_prob", where);
        if (pred.top_prob <= 0.0) {
            schema_error("'top_prob' must be positive" + where);
        }
        const auto &cur = require(item, "cur_prob", where);
        if (cur.is_null()) {
            if (!state.is_masked(i)) {
                schema_error("'cur_prob' is null for an unmasked position" + where);
            }
        } else {
            if (state.is_masked(i)) {
                schema_error("'cur_prob' must be null for a masked position" + where);
            }
            pred.cur_prob = require_probability(item, "cur_prob", where);
        }
        const auto &entropy = require(item, "entropy", where);
        if (!entropy.is_number() || !(entropy.get<double>() >= 0.0)) {
            schema_error("'entropy' must be a nonnegative number" + where);
        }
        pred.entropy = entropy.get<double>();
    }
    return out;
}

RemoteBackend::RemoteBackend(RemoteOptions options) : m_options(std::move(options)) {
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(m_options.url, m, url_re)) {
        throw InputError("remote backend URL must look like http://host[:port][/path], got '" + m_options.url + "'");
    }
    if (m_options.url.starts_with("https://")) {
        throw InputError("https is not supported by this build; use http");
    }
    m_scheme_host_port = m[1].str();
    m_base_path = m[2].matched ? m[2].str() : "";
    while (!m_base_path.empty() && m_base_path.back() == '/') {
        m_base_path.pop_back();
    }
}

PredictionSet RemoteBackend::predict(const SequenceState &state) const {
    httplib::Client client(m_scheme_host_port);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(m_options.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(m_options.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers;
    if (!m_options.auth_token.empty()) {
        headers.emplace("Authorization", "Bearer " + m_options.auth_token);
    }

    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(m_base_path + "/v1/predict", headers, encode_predict_request(state, m_options.run_id),
                           "application/json");
    if (!res) {
        const auto err = res.error();
        const auto elapsed = std::chrono::steady_clock::now() - started;
        const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                               (err == httplib::Error::Read && elapsed >= m_options.timeout);
        throw BackendError(timed_out ? BackendErrorKind::timeout : BackendErrorKind::transport,
                           "POST " + m_options.url + "/v1/predict failed: " + httplib::to_string(err));
    }
    if (res->status < 200 || res->status >= 300) {
        std::string detail = res->body;
        try {
            auto doc = json::parse(res->body);
            if (doc.is_object() && doc.contains("error") && doc["error"].is_string()) {
                detail = doc["error"].get<std::string>();
            }
        } catch (const json::exception &) {
        }
        throw BackendError(BackendErrorKind::status, "HTTP " + std::to_string(res->status) + ": " + detail,
                           res->status);
    }
    return decode_predict_response(res->body, state);
}

} // namespace saber
