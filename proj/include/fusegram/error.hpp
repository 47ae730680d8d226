#pragma once

#include <stdexcept>
#include <string>

namespace fusegram {

/**
 * Base class for every error raised by the library. The kind maps onto the
 * CLI exit codes (usage = 1, data = 2, numeric = 3).
 */
class Error : public std::runtime_error {
public:
  enum class Kind { usage = 1, data = 2, numeric = 3 };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  [[nodiscard]] Kind kind() const noexcept { return kind_; }
  [[nodiscard]] int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
  Kind kind_;
};

/// Bad arguments or violated preconditions.
class UsageError : public Error {
public:
  explicit UsageError(const std::string& what) : Error(Kind::usage, what) {}
};

/// Malformed input files or datasets that cannot support the request.
class DataError : public Error {
public:
  explicit DataError(const std::string& what) : Error(Kind::data, what) {}
};

/// Non-finite values, degenerate distributions, solver failures.
class NumericError : public Error {
public:
  explicit NumericError(const std::string& what) : Error(Kind::numeric, what) {}
};

} // namespace fusegram
