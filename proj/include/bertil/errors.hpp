#pragma once

#include <stdexcept>
#include <string>

namespace bertil {

/// Base of every error raised by the library. Callers that only care about
/// "something went wrong" catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content (bad magic, truncated record, unparsable line).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// The file system refused a read or write.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Inputs are individually well-formed but inconsistent with each other.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// An option value is outside its legal range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The caller passed an argument the operation cannot work with.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A numeric evaluation produced a non-finite result.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

}  // namespace bertil
