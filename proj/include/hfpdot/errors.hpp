#pragma once

#include <stdexcept>
#include <string>

namespace hfpdot {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched vector/matrix sizes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation (boundary
/// points of the simplex, infeasible slices, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid scalar parameter (non-positive epsilon, empty sample set, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Problem size beyond what an oracle-scale routine accepts.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Zero kernel row or column, or an otherwise degenerate problem.
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

/// Matrix expected to be symmetric positive definite is not.
class DefinitenessError : public Error {
 public:
  using Error::Error;
};

/// Conditional distribution undefined (zero conditioning mass).
class ConditioningError : public Error {
 public:
  using Error::Error;
};

/// Rejection sampler whose acceptance rate collapsed.
class RadiusTooSmallError : public Error {
 public:
  using Error::Error;
};

/// Configuration rejected before any computation ran.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver stopped before reaching its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_error, long iterations)
      : Error(what), last_error_(last_error), iterations_(iterations) {}

  double last_error() const noexcept { return last_error_; }
  long iterations() const noexcept { return iterations_; }

 private:
  double last_error_;
  long iterations_;
};

}  // namespace hfpdot
