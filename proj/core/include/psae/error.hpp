#pragma once

#include <stdexcept>
#include <string>

namespace psae {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not conform for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration violates one of its invariants.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside the domain an operation accepts.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A file could not be read or written, or is malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Stored content digest does not match the content.
class IntegrityError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Training diverged or was asked to run on unusable input.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace psae
