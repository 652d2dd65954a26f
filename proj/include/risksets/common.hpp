#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace risksets {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or malformed input data. CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File system failure (missing path, unreadable, write failure). CLI exit code 2.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Numeric failure during computation (non-finite values, degenerate inputs).
/// CLI exit code 1.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// The risk bound alpha - (B-alpha)/n is infeasible at the available
/// calibration size.
class InsufficientCalibration : public NumericError {
 public:
  using NumericError::NumericError;
};

inline bool is_finite(double x) { return std::isfinite(x); }

}  // namespace risksets
