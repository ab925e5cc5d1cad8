#pragma once

#include <stdexcept>
#include <string>

namespace denet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Input parsed but violates a documented invariant (manifest rows, file
/// magic, config keys, ...). The CLI maps these to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Matrix shapes do not agree with the operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Mathematical precondition violated (empty input, single-class labels).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or otherwise unusable numeric data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Training set cannot provide the requested batch.
class DatasetError : public Error {
 public:
  using Error::Error;
};

}  // namespace denet
