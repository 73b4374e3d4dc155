#pragma once

#include <stdexcept>
#include <string>

namespace ifer {

/// Tensor or array has the wrong rank or extent.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inconsistent architecture or run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Value outside its declared domain (NaN input, out-of-range label, ...).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Checkpoint or image could not be read or does not match expectations.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A frozen parameter set changed during a stage that must not modify it.
class FrozenContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ifer
