#pragma once

#include <stdexcept>
#include <string>

namespace alike {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent network or operator configuration (e.g. channel mismatch).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse, such as calling backward on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Input data violating a precondition (bad image size, malformed file).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Evaluation outside the valid domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

}  // namespace alike
