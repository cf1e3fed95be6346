#pragma once

#include <stdexcept>
#include <string>

namespace mqvr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Bytes on disk do not follow the blob or manifest layout (bad magic, version, truncation).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Dimensions or counts disagree between two objects that must agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates a documented invariant (non-finite data, duplicate ids, bad simplex...).
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// User-supplied configuration is missing a field or carries an invalid value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace mqvr
