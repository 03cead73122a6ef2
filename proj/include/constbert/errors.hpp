#pragma once

#include <stdexcept>
#include <string>

namespace constbert {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible matrix shapes or dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Overflow / NaN produced by a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad magic or otherwise malformed binary file.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class TruncatedError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

// Malformed line in a text file; message carries the line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Unknown identifier (external doc id, query id, ...).
class LookupError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace constbert
