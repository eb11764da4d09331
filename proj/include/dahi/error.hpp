#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace dahi {

// Base for every error raised by the library. Subclasses map onto CLI exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class InfeasibleError : public Error {
public:
    using Error::Error;
};

class EmptyResultError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

/// Collected non-fatal conditions (degenerate but legal inputs).
using Warnings = std::vector<std::string>;

inline void warn(Warnings* sink, std::string message) {
    if (sink != nullptr) {
        sink->push_back(std::move(message));
    }
}

} // namespace dahi
