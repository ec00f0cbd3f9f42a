#pragma once

#include <stdexcept>
#include <string>

namespace vitloss {

/// Root of every error raised by the library. Callers that only care about
/// "something went wrong in vitloss" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition on arguments (ranges, ratios, indices) was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf appeared where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Weight file errors.
class FormatError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

}  // namespace vitloss
