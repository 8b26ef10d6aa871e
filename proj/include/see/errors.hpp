#pragma once

#include <stdexcept>
#include <string>

namespace see {

// Every error raised by the library derives from Error so callers can catch
// the family at once. The subclasses mirror the failure categories the CLI
// reports back to users.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration (dimensions, hyperparameters, grid values).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A derived tensor or feature shape does not fit the operation.
class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// API misuse: calling things out of order or with invalid arguments.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Input data is missing, truncated or inconsistent at run time.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. The message carries the line number.
class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure while optimizing (non-finite loss or gradient).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace see
