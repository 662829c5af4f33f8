// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace saber {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller supplied a value outside an operation's domain.
class InputError : public Error {
public:
    using Error::Error;
};

/// Operation would break a SequenceState invariant.
class StateError : public Error {
public:
    using Error::Error;
};

/// A collaborator (backend, trace consumer) broke its side of a contract.
class ContractError : public Error {
public:
    using Error::Error;
};

enum class BackendErrorKind { transport, timeout, status, schema, server };

const char *to_string(BackendErrorKind kind);

class BackendError : public Error {
public:
    BackendError(BackendErrorKind kind, const std::string &message, int status = 0)
        : Error(std::string(to_string(kind)) + ": " + message), m_kind(kind), m_status(status) {}

    BackendErrorKind kind() const { return m_kind; }
    // HTTP status for `status` errors, 0 otherwise.
    int status() const { return m_status; }

private:
    BackendErrorKind m_kind;
    int m_status;
};

class CorruptTraceError : public Error {
public:
    // line is 1-based; 0 when the problem is not tied to a single line.
    CorruptTraceError(const std::string &message, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + message : message), m_line(line) {}

    std::size_t line() const { return m_line; }

private:
    std::size_t m_line;
};

} // namespace saber
