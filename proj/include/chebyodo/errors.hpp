#pragma once

#include <stdexcept>
#include <string>

namespace chebyodo {

// Error taxonomy used across the library.
//
// The CLI maps these onto process exit codes: configuration, contract,
// shape, domain and format problems exit 1; numerical failures (divergence,
// NaN loss, gradient-check mismatch) exit 2.

// Tensor shapes disagree with what an operation requires.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A value lies outside an operation's mathematical domain (e.g. arccos of 1.5).
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A documented precondition between modules was violated by the caller.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A file (sequence CSV, checkpoint, config) is malformed or truncated.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure at runtime: NaN loss, non-finite values, failed checks.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace chebyodo
