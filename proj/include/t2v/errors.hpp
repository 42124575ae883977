#pragma once

#include <stdexcept>
#include <string>

namespace t2v {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid arguments or configuration supplied by the caller (exit code 2).
class UsageError : public Error {
public:
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

/// Malformed, truncated, stale, or otherwise unusable data (exit code 3).
class DataError : public Error {
public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

/// Non-finite values or singular systems encountered mid-computation
/// (exit code 4).
class NumericError : public Error {
public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace t2v
