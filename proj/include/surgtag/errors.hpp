#pragma once

#include <stdexcept>
#include <string>

namespace surgtag {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not agree for an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent model, fusion or pipeline configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input value outside an operation's domain.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. Carries the offending location in the message.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Remote or subprocess service did not answer.
class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace surgtag
