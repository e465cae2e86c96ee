#pragma once

#include <stdexcept>
#include <string>

namespace mtabnet {

/// Root of every error thrown by the library. The CLI maps each leaf type to
/// a distinct process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes that do not line up (matmul inner dims, concat, elementwise).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of a function, e.g. log of a non-positive value.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller broke a documented precondition (non-scalar loss, non-finite input,
/// negative prior entry).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Batch too small for the requested statistics.
class BatchSizeError : public Error {
 public:
  using Error::Error;
};

/// Malformed, empty, or inconsistent data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint does not match the dataset it is applied to.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint written by an incompatible format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

/// Truncated or otherwise damaged checkpoint.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Statistic undefined because its variance is zero.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtabnet
