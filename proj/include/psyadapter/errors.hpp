// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace psyadapter {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents are incompatible.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An index (class id, token id, row) is out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A primitive produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration: bad dimensions, unknown names, inconsistent settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed user input such as token sequences, corpora or texts.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked on an object that lacks required state.
class StateError : public Error {
 public:
  using Error::Error;
};

/// No in-vocabulary token survived feature extraction.
class EmptyFeatureError : public InputError {
 public:
  using InputError::InputError;
};

enum class FormatErrorKind {
  io,
  bad_magic,
  corrupt_header,
  metadata_mismatch,
  truncated,
  trailing_data,
  malformed_record,  // line-oriented files: a line that does not parse
};

const char* to_string(FormatErrorKind kind);

/// Failure reading or writing one of the artifact files.
class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

}  // namespace psyadapter
