#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>

#include "beki/constraints.hpp"
#include "beki/linalg.hpp"

namespace beki {

/// A forward map G : R^d -> R^K.  Implementations must be safe for
/// concurrent read-only use.
class ForwardMap {
 public:
  virtual ~ForwardMap() = default;

  virtual Index input_dim() const = 0;
  virtual Index output_dim() const = 0;
  virtual Vector apply(const Vector& u) const = 0;

  virtual bool has_jacobian() const { return false; }
  /// K x d Jacobian DG(u).  Throws UnsupportedOperation by default.
  virtual Matrix jacobian(const Vector& u) const;
  /// DG(u)ᵀ w.  Defaults to going through jacobian(); models with an adjoint
  /// override it.
  virtual Vector jacobian_transpose_apply(const Vector& u, const Vector& w) const;

  /// Applies the map to every column of `particles` (d x J -> K x J).
  Matrix apply_columns(const Matrix& particles) const;
};

/// G(u) = A u.
class LinearMap final : public ForwardMap {
 public:
  explicit LinearMap(Matrix a) : a_(std::move(a)) {}
  Index input_dim() const override { return a_.cols(); }
  Index output_dim() const override { return a_.rows(); }
  Vector apply(const Vector& u) const override { return a_ * u; }
  bool has_jacobian() const override { return true; }
  Matrix jacobian(const Vector&) const override { return a_; }
  const Matrix& matrix() const { return a_; }

 private:
  Matrix a_;
};

/// G(u) = A u + ε [sin(u_1), ..., sin(u_K)]ᵀ with square A.
class PseudolinearMap : public ForwardMap {
 public:
  PseudolinearMap(Matrix a, double eps);
  Index input_dim() const override { return a_.cols(); }
  Index output_dim() const override { return a_.rows(); }
  Vector apply(const Vector& u) const override;
  bool has_jacobian() const override { return true; }
  /// A + ε diag(cos(u_i))
  Matrix jacobian(const Vector& u) const override;
  Vector jacobian_transpose_apply(const Vector& u, const Vector& w) const override;
  const Matrix& matrix() const { return a_; }
  double eps() const { return eps_; }

 private:
  Matrix a_;
  double eps_;
};

/// Forward map assembled from callables (tests, bindings).
class FunctionMap final : public ForwardMap {
 public:
  using ApplyFn = std::function<Vector(const Vector&)>;
  using JacobianFn = std::function<Matrix(const Vector&)>;
  FunctionMap(Index d, Index k, ApplyFn apply, JacobianFn jacobian = nullptr);
  Index input_dim() const override { return d_; }
  Index output_dim() const override { return k_; }
  Vector apply(const Vector& u) const override { return apply_(u); }
  bool has_jacobian() const override { return static_cast<bool>(jacobian_); }
  Matrix jacobian(const Vector& u) const override;

 private:
  Index d_;
  Index k_;
  ApplyFn apply_;
  JacobianFn jacobian_;
};

/// Everything that defines the inverse problem y = G(u) + η, η ~ N(0, Γ),
/// with regularization metric C0.
struct ForwardModel {
  std::shared_ptr<const ForwardMap> map;
  Vector y;
  std::shared_ptr<const SpdMatrix> noise_cov;  ///< Γ
  std::shared_ptr<const SpdMatrix> prior_cov;  ///< C0

  Index dim() const { return map->input_dim(); }
  Index data_dim() const { return map->output_dim(); }
  /// Throws InvalidInput on inconsistent dimensions or missing pieces.
  void validate() const;
};

/// Φ^reg(u) = ½‖G(u) - y‖²_Γ + (λ/2)‖u‖²_{C0}, with ‖x‖²_Σ = <x, Σ^{-1} x>.
struct RegularizedPotential {
  ForwardModel model;
  double lambda = 0.0;
};

/// Φ^b(u) = Φ^reg(u) - (1/τ) Σ log(-h_i(u)).
struct BarrierPotential {
  RegularizedPotential base;
  ConstraintSet constraints;
  double tau = 1.0;
};

double phi_misfit(const ForwardModel& model, const Vector& u);
double phi_reg(const RegularizedPotential& pot, const Vector& u);
/// DG(u)ᵀ Γ^{-1}(G(u) - y) + λ C0^{-1} u.  Throws UnsupportedOperation when
/// the map has no Jacobian.
Vector grad_phi_reg(const RegularizedPotential& pot, const Vector& u);
/// Gradient of the misfit alone.
Vector grad_phi_misfit(const ForwardModel& model, const Vector& u);
/// Φ^reg + barrier, kInfiniteBarrier outside the strict interior.
double phi_barrier(const BarrierPotential& bp, const Vector& u);
/// grad_phi_reg - barrier_drift.  Throws FeasibilityMarginError off the
/// strict interior.
Vector grad_phi_barrier(const BarrierPotential& bp, const Vector& u);

struct StrongConvexityReport {
  double threshold = 0.0;
  bool satisfied = false;
  double sampled_min_hessian_eig = 0.0;
  double a_max = 0.0;
  double y_max = 0.0;
};

/// Hessian of ½‖Au + ε sin(u) - y‖² + (λ/2)‖u‖² at x.
Matrix pseudolinear_hessian(const Matrix& a, double eps, double lambda,
                            const Vector& y, const Vector& x);

/// Checks the sufficient condition λ > ((4 + B) A_max + y_max) ε + ε² for
/// strong convexity of the pseudolinear Tikhonov functional, and samples the
/// smallest Hessian eigenvalue at `samples` seeded points of the ball of
/// radius B.
StrongConvexityReport check_strong_convexity_pseudolinear(
    const Matrix& a, double eps, double lambda, const Vector& y, double radius_b,
    int samples = 100, std::uint64_t seed = 2024);

}  // namespace beki
