#pragma once

#include <stdexcept>
#include <string>

namespace drrkit {

/// Error taxonomy shared by the library and the CLI exit codes:
/// usage = 1, data = 2, degenerate = 3.
enum class ErrorKind { usage = 1, data = 2, degenerate = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

/// Caller misuse: bad arguments, wrong volume kind, index out of range.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error(ErrorKind::usage, msg) {}
};

/// Malformed or inconsistent data: file format errors, truncation,
/// dimension mismatches, invalid configuration.
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(ErrorKind::data, msg) {}
};

/// Numerical degeneracy: constant images under NCC, zero-variance series.
class DegenerateError : public Error {
public:
    explicit DegenerateError(const std::string& msg) : Error(ErrorKind::degenerate, msg) {}
};

}  // namespace drrkit
