#pragma once

#include <stdexcept>
#include <string>

namespace cisper {

// Base for every error raised by the library. Errors derived from UserError
// are caused by bad inputs (data, config, files) and map to CLI exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UserError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public UserError {
 public:
  using UserError::UserError;
};

class DatasetError : public UserError {
 public:
  using UserError::UserError;
};

class SchemaError : public UserError {
 public:
  using UserError::UserError;
};

class CorruptCacheError : public UserError {
 public:
  using UserError::UserError;
};

class NotFoundError : public UserError {
 public:
  using UserError::UserError;
};

class VerbalizerError : public UserError {
 public:
  using UserError::UserError;
};

class InputTooLongError : public UserError {
 public:
  using UserError::UserError;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InjectionError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace cisper
