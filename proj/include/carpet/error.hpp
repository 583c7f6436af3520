#pragma once

#include <stdexcept>
#include <string>

namespace carpet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed carpet generator data (bad dimension, out-of-range or duplicate
/// indices). Distinct from an axiom failure, which is reported, not thrown.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// A requested object would exceed the configured size budget.
class ResourceError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of an operation (point not in the carpet,
/// radius below resolution, level mismatch, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// A required upstream quantity (e.g. the resistance scale factor) is missing.
class DependencyError : public Error {
 public:
  using Error::Error;
};

/// Configuration or command line problem.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Linear solver failed to reach the requested tolerance.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual)
      : Error(what + " (relative residual " + std::to_string(residual) + ")"), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace carpet
