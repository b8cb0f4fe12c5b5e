#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "beki/linalg.hpp"

namespace beki {

/// Value returned for a barrier evaluated outside the strict interior.
inline constexpr double kInfiniteBarrier = std::numeric_limits<double>::infinity();

enum class ConstraintKind { kAffine, kNormBall, kCustom };

/// A convex inequality h(u) <= 0 together with its gradient.
class ConvexConstraint {
 public:
  virtual ~ConvexConstraint() = default;

  virtual ConstraintKind kind() const = 0;
  virtual double value(const Vector& u) const = 0;
  virtual Vector gradient(const Vector& u) const = 0;
  /// accum += scale * ∇h(u).  Overridden where the gradient is sparse.
  virtual void add_gradient(const Vector& u, double scale, Vector& accum) const {
    accum += scale * gradient(u);
  }
  /// Magnitude of typical values of h, used for the strict-feasibility margin.
  virtual double scale() const = 0;
  /// Margin below zero that h must respect before barrier gradients are
  /// evaluated: 1e-10 * (1 + scale()).
  double margin_epsilon() const;
};

/// h(u) = Σ_k c_k u_{i_k} + offset with a sparse coefficient list.
class AffineConstraint final : public ConvexConstraint {
 public:
  struct Term {
    Index index;
    double coeff;
  };
  AffineConstraint(std::vector<Term> terms, double offset);

  ConstraintKind kind() const override { return ConstraintKind::kAffine; }
  double value(const Vector& u) const override;
  Vector gradient(const Vector& u) const override;
  void add_gradient(const Vector& u, double scale, Vector& accum) const override;
  double scale() const override { return std::abs(offset_); }

  const std::vector<Term>& terms() const { return terms_; }
  double offset() const { return offset_; }

 private:
  std::vector<Term> terms_;
  double offset_;
};

/// h(u) = ½ <u, C^{-1} u> - radius.
class NormBallConstraint final : public ConvexConstraint {
 public:
  NormBallConstraint(std::shared_ptr<const SpdMatrix> metric, double radius);

  ConstraintKind kind() const override { return ConstraintKind::kNormBall; }
  double value(const Vector& u) const override;
  Vector gradient(const Vector& u) const override;
  double scale() const override { return radius_; }

  double radius() const { return radius_; }
  const SpdMatrix& metric() const { return *metric_; }

 private:
  std::shared_ptr<const SpdMatrix> metric_;
  double radius_;
};

/// User-supplied constraint; the caller vouches for convexity and gradient.
class CustomConstraint final : public ConvexConstraint {
 public:
  using ValueFn = std::function<double(const Vector&)>;
  using GradientFn = std::function<Vector(const Vector&)>;
  CustomConstraint(ValueFn value, GradientFn gradient, double scale = 1.0);

  ConstraintKind kind() const override { return ConstraintKind::kCustom; }
  double value(const Vector& u) const override { return value_(u); }
  Vector gradient(const Vector& u) const override { return gradient_(u); }
  double scale() const override { return scale_; }

 private:
  ValueFn value_;
  GradientFn gradient_;
  double scale_;
};

/// Immutable list of convex constraints describing Ω = {u : h_i(u) <= 0}.
class ConstraintSet {
 public:
  ConstraintSet() = default;
  ConstraintSet(std::vector<std::shared_ptr<const ConvexConstraint>> constraints,
                std::optional<Vector> interior_witness = std::nullopt);

  Index size() const { return static_cast<Index>(constraints_.size()); }
  bool empty() const { return constraints_.empty(); }
  const ConvexConstraint& operator[](Index i) const { return *constraints_[i]; }
  const std::optional<Vector>& interior_witness() const { return witness_; }

  /// All h_i(u).
  Vector values(const Vector& u) const;
  /// True when every h_i(u) < -margin_epsilon_i.
  bool strictly_feasible(const Vector& u) const;

 private:
  std::vector<std::shared_ptr<const ConvexConstraint>> constraints_;
  std::optional<Vector> witness_;
};

/// Lower/upper bounds on a subset of coordinates.
struct BoxBounds {
  Vector lower;
  Vector upper;
  std::vector<Index> indices;

  /// Throws InvalidBounds unless sizes agree and lower < upper.
  void validate() const;
  /// Same bounds [a, b] on every coordinate of R^d.
  static BoxBounds uniform(Index d, double a, double b);
};

/// h_i(u) = a_i - u_i and h_{i+m}(u) = u_i - b_i.
ConstraintSet make_box(const BoxBounds& bounds);

/// h(u) = ½ <u, C0^{-1} u> - radius.  Throws InvalidInput for radius <= 0.
ConstraintSet make_norm_ball(std::shared_ptr<const SpdMatrix> c0, double radius);

/// -(1/τ) Σ log(-h_i(u)), or kInfiniteBarrier outside the strict interior.
double barrier_value(const ConstraintSet& cs, const Vector& u, double tau);

/// (1/τ) Σ ∇h_i(u) / h_i(u), which equals minus the gradient of
/// barrier_value.  Throws FeasibilityMarginError within the margin.
Vector barrier_drift(const ConstraintSet& cs, const Vector& u, double tau);

/// Componentwise clamp of the constrained coordinates.
Vector project_box(const BoxBounds& bounds, const Vector& u);

/// max_i h_i(u); -inf for an empty set.
double feasibility_margin(const ConstraintSet& cs, const Vector& u);

}  // namespace beki
