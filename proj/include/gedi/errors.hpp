#pragma once

#include <stdexcept>
#include <string>

namespace gedi {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A primitive produced NaN/Inf, or an optimizer saw a non-finite gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// The tape or an API was used out of contract (e.g. backward on a constant).
class UsageError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Input data cannot support the requested operation.
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace gedi
