#pragma once

#include <stdexcept>
#include <string>

namespace kbeta {

/// Invalid hyperparameters, malformed schedule strings, mismatched trees.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN or Inf reached a place that refuses to propagate it.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs for which a statistic is undefined (zero variance, no discordant pairs, ...).
class DegenerateSampleError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace kbeta
