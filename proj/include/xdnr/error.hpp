#pragma once

#include <stdexcept>
#include <string>

namespace xdnr {

/// Malformed or inconsistent input data (files, ids, shapes).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller passed arguments outside an operation's domain.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numerical failure during optimization (non-finite loss, degenerate vectors).
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace xdnr
