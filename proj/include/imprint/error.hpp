#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace imprint {

/// Base for every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the 1-based line number and offending field
/// when known (line 0 / empty field otherwise).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0, std::string field = {})
        : Error(line ? "line " + std::to_string(line) + (field.empty() ? "" : ", field '" + field + "'") + ": " + what
                     : what),
          line_(line), field_(std::move(field)) {}

    std::size_t line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    std::size_t line_;
    std::string field_;
};

/// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or command-line usage.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Numerical failure (singular system, zero variance, ...).
class NumericError : public Error {
public:
    using Error::Error;
};

/// Failure talking to a chat, embedding or search provider.
class ProviderError : public Error {
public:
    ProviderError(const std::string& what, bool retriable) : Error(what), retriable_(retriable) {}
    bool retriable() const { return retriable_; }

private:
    bool retriable_;
};

} // namespace imprint
