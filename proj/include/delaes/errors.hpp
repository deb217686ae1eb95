// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace delaes {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file (missing column, bad number, wrong vector width).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Score outside the configured range of its prompt.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Bytes that cannot be decoded under the selected text encoding.
class EncodingError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller misuse: empty training set, too few essays for k folds, bad config.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or parameter during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace delaes
