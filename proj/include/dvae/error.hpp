#pragma once

#include <stdexcept>
#include <string>

namespace dvae {

/// Base class of every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value left its mathematical domain (log of a non-positive number, NaN, divergent integral...).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A configuration or argument violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A file does not follow the expected binary or textual layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure; the message always carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dvae
