#pragma once

#include <stdexcept>
#include <string>

namespace shiftvit {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree (binary op, matmul, conv, loss).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An extent the operation needs is zero (pool over empty plane, norm over C == 0).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, shift, or training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API precondition (non-scalar loss, step out of range, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity in a loss or gradient.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Batch norm evaluated before any running statistics exist.
class UninitializedStatsError : public Error {
 public:
  using Error::Error;
};

/// File-level errors share a base so callers can catch "bad input file".
class FileError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FileError {
 public:
  using FileError::FileError;
};

class TruncatedError : public FileError {
 public:
  using FileError::FileError;
};

class VersionError : public FileError {
 public:
  using FileError::FileError;
};

/// Stored array shapes disagree with the model they are loaded into.
class ShapeMismatchError : public FileError {
 public:
  using FileError::FileError;
};

/// IDX image and label files disagree on item count.
class DimMismatchError : public FileError {
 public:
  using FileError::FileError;
};

}  // namespace shiftvit
