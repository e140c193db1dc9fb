#pragma once

#include <stdexcept>
#include <string>

namespace mtl {

// Exception families map onto CLI exit codes: usage 1, data 2, numeric 3.

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a cooperative stop request interrupts a long-running job.
struct Interrupted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw UsageError(what);
}

}  // namespace mtl
