#pragma once

#include <stdexcept>
#include <string>

namespace dscale {

/// Invalid hyperparameters, malformed configuration, misuse of an API contract.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents disagree with an operation's contract.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or malformed files, failed reads/writes.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dscale
