#pragma once

#include <stdexcept>
#include <string>

namespace mvlt {

/// Base class for every error raised by the library. The CLI maps the
/// concrete subclass to a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not conform for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Index outside the valid range (class targets, row gathers).
class IndexError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an API was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Character outside the charset, or a label that cannot be encoded.
class LabelError : public Error {
 public:
  using Error::Error;
};

/// Dataset content problems (missing labels, wrong image size, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text file (bad magic, truncation, version).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures. The message always names the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mvlt
