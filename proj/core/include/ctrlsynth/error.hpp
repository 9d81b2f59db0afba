#pragma once

#include <stdexcept>
#include <string>

namespace ctrlsynth {

/// Base class for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class BindingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Raised when a file parses but does not follow the expected schema.
class CorruptFileError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace ctrlsynth
