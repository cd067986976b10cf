#pragma once

#include <stdexcept>
#include <string>

namespace dpmppp {

/// Base class for every error raised by the library. The CLI maps each
/// subclass onto a process exit code.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
  [[nodiscard]] virtual int exit_code() const noexcept { return 1; }
};

/// Invalid hyperparameters, basis settings, scenario or fit configuration.
class ConfigError : public Error {
public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 2; }
};

/// Argument outside the mathematical domain of a function (x <= 0 for
/// digamma, a point outside the basis domain, a negative rate, ...).
class DomainError : public ConfigError {
public:
  using ConfigError::ConfigError;
};

/// An intensity specification whose declared bound does not dominate it.
class SpecificationError : public ConfigError {
public:
  using ConfigError::ConfigError;
};

/// Malformed or inconsistent input data (CSV schema violations, bad marks).
class DataError : public Error {
public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 3; }
};

/// Numerical breakdown: failed factorizations, non-finite scores,
/// infeasible iterates.
class NumericalError : public Error {
public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 4; }
};

/// A theory diagnostic did not hold.
class DiagnosticFailure : public Error {
public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 5; }
};

}  // namespace dpmppp
