#pragma once

#include <stdexcept>
#include <string>

namespace telescopic {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-range hyperparameter passed to an op (eps <= 0, p outside [0,1), ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// API misuse: non-scalar loss, unknown strategy name, empty dataset, ...
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed user data: out-of-vocabulary token, non-binary mask, ...
class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

// A forward op produced a non-finite value from finite inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace telescopic
