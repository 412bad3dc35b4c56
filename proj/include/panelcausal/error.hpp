#pragma once

#include <stdexcept>
#include <string>

namespace panelcausal {

/// Base for every error raised by the library. `exit_code()` is the CLI
/// process status associated with the error family.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Malformed input data or an operation applied to data it does not fit.
class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Numerical failure inside an estimator (singularity, separation,
/// non-convergence, too few clusters).
class EstimationError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

/// Raised by binary-response MLE when the outcome is perfectly predicted.
class SeparationError : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

}  // namespace panelcausal
