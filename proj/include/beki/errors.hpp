#pragma once

#include <stdexcept>
#include <string>

namespace beki {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dimension mismatch or otherwise malformed arguments.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Box bounds with a_i >= b_i, or a box that cannot be used as requested.
class InvalidBounds : public Error {
 public:
  using Error::Error;
};

/// A matrix that must be symmetric positive definite is not.
class FactorizationError : public Error {
 public:
  using Error::Error;
};

/// The ensemble has collapsed to a point (span of rank zero).
class DegenerateSpan : public Error {
 public:
  using Error::Error;
};

/// Evaluation requested too close to (or outside) the boundary of the
/// feasible set.  The integrator reacts by shrinking the step.
class FeasibilityMarginError : public Error {
 public:
  FeasibilityMarginError(const std::string& what, double margin)
      : Error(what), margin_(margin) {}
  double margin() const { return margin_; }

 private:
  double margin_;
};

/// Operation requires a capability the forward map does not provide.
class UnsupportedOperation : public Error {
 public:
  using Error::Error;
};

/// The adaptive step fell below h_min (or too many feasibility halvings).
class StiffnessAbort : public Error {
 public:
  StiffnessAbort(const std::string& what, double t, double margin, double tau)
      : Error(what), t_(t), margin_(margin), tau_(tau) {}
  double time() const { return t_; }
  double margin() const { return margin_; }
  double tau() const { return tau_; }

 private:
  double t_;
  double margin_;
  double tau_;
};

/// Integrated state became non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double t) : Error(what), t_(t) {}
  double time() const { return t_; }

 private:
  double t_;
};

/// Linear solver failure inside a forward model.
class SolverFailure : public Error {
 public:
  using Error::Error;
};

/// Starting point of an optimizer is not strictly feasible.
class InvalidStart : public Error {
 public:
  using Error::Error;
};

/// A fitted rate is undefined (too few points or nonpositive values).
class UndefinedRate : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration or command line.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace beki
