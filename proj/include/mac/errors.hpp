#pragma once

#include <stdexcept>
#include <string>

namespace mac {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, training, or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Feature schema is malformed or does not match the data.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// A data row could not be interpreted.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A file could not be parsed.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint belongs to a different schema or is corrupt.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Training diverged.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Linear solve failed.
class SolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace mac
