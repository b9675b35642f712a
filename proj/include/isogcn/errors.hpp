#pragma once

#include <stdexcept>
#include <string>

namespace isogcn {

// Root of every error raised by the library. The CLI maps NumericError to
// exit status 2 and everything else to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Precondition on a recorded computation violated (e.g. backward from a
// non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// All attention norm products in a swap sample are zero.
class DegenerateAttentionError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace isogcn
