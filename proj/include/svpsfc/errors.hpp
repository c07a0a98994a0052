#pragma once

#include <stdexcept>
#include <string>

namespace svpsfc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments to a generator, configuration, or constructor.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible file contents (instances, checkpoints, configs).
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition, e.g. stepping with a masked action.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Non-finite values surfaced during learning.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace svpsfc
