#pragma once

#include <stdexcept>
#include <string>

namespace l2occg {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operand shapes or vector lengths do not conform.
struct DimensionError : Error {
  using Error::Error;
};

/// A NaN or Inf appeared where finite values are required.
struct NumericError : Error {
  using Error::Error;
};

/// A precondition on the call itself was violated.
struct ContractError : Error {
  using Error::Error;
};

/// Rejection sampling ran out of budget.
struct SamplingError : Error {
  using Error::Error;
};

/// Unreadable, malformed or version-incompatible file.
struct FormatError : Error {
  using Error::Error;
};

}  // namespace l2occg
