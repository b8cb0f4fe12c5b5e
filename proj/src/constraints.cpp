#include "beki/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "beki/errors.hpp"

namespace beki {

double ConvexConstraint::margin_epsilon() const { return 1e-10 * (1.0 + scale()); }

AffineConstraint::AffineConstraint(std::vector<Term> terms, double offset)
    : terms_(std::move(terms)), offset_(offset) {}

double AffineConstraint::value(const Vector& u) const {
  double v = offset_;
  for (const auto& t : terms_) v += t.coeff * u(t.index);
  return v;
}

Vector AffineConstraint::gradient(const Vector& u) const {
  Vector g = Vector::Zero(u.size());
  for (const auto& t : terms_) g(t.index) += t.coeff;
  return g;
}

void AffineConstraint::add_gradient(const Vector& /*u*/, double scale,
                                    Vector& accum) const {
  for (const auto& t : terms_) accum(t.index) += scale * t.coeff;
}

NormBallConstraint::NormBallConstraint(std::shared_ptr<const SpdMatrix> metric,
                                       double radius)
    : metric_(std::move(metric)), radius_(radius) {
  if (!metric_) throw InvalidInput("norm-ball metric is null");
  if (!(radius_ > 0.0)) throw InvalidInput("norm-ball radius must be positive");
}

double NormBallConstraint::value(const Vector& u) const {
  return 0.5 * metric_->inv_quad(u) - radius_;
}

Vector NormBallConstraint::gradient(const Vector& u) const { return metric_->solve(u); }

CustomConstraint::CustomConstraint(ValueFn value, GradientFn gradient, double scale)
    : value_(std::move(value)), gradient_(std::move(gradient)), scale_(scale) {
  if (!value_ || !gradient_) {
    throw InvalidInput("custom constraints need both value and gradient");
  }
}

ConstraintSet::ConstraintSet(
    std::vector<std::shared_ptr<const ConvexConstraint>> constraints,
    std::optional<Vector> interior_witness)
    : constraints_(std::move(constraints)), witness_(std::move(interior_witness)) {}

Vector ConstraintSet::values(const Vector& u) const {
  Vector h(size());
  for (Index i = 0; i < size(); ++i) h(i) = constraints_[i]->value(u);
  return h;
}

bool ConstraintSet::strictly_feasible(const Vector& u) const {
  for (const auto& c : constraints_) {
    if (!(c->value(u) < -c->margin_epsilon())) return false;
  }
  return true;
}

void BoxBounds::validate() const {
  const auto m = static_cast<Index>(indices.size());
  if (lower.size() != m || upper.size() != m) {
    throw InvalidBounds("box bounds: lower, upper and indices differ in length");
  }
  for (Index i = 0; i < m; ++i) {
    if (!(lower(i) < upper(i))) {
      std::ostringstream os;
      os << "box bounds: lower >= upper at component " << indices[i] << " ("
         << lower(i) << " >= " << upper(i) << ")";
      throw InvalidBounds(os.str());
    }
  }
}

BoxBounds BoxBounds::uniform(Index d, double a, double b) {
  BoxBounds box;
  box.lower = Vector::Constant(d, a);
  box.upper = Vector::Constant(d, b);
  box.indices.resize(d);
  for (Index i = 0; i < d; ++i) box.indices[i] = i;
  box.validate();
  return box;
}

ConstraintSet make_box(const BoxBounds& bounds) {
  bounds.validate();
  const auto m = static_cast<Index>(bounds.indices.size());
  std::vector<std::shared_ptr<const ConvexConstraint>> cs;
  cs.reserve(2 * m);
  for (Index i = 0; i < m; ++i) {
    cs.push_back(std::make_shared<AffineConstraint>(
        std::vector<AffineConstraint::Term>{{bounds.indices[i], -1.0}}, bounds.lower(i)));
  }
  for (Index i = 0; i < m; ++i) {
    cs.push_back(std::make_shared<AffineConstraint>(
        std::vector<AffineConstraint::Term>{{bounds.indices[i], 1.0}}, -bounds.upper(i)));
  }
  // The witness only has meaning for the constrained coordinates; the rest
  // are left at zero.
  Index d = 0;
  for (Index idx : bounds.indices) d = std::max(d, idx + 1);
  Vector witness = Vector::Zero(d);
  for (Index i = 0; i < m; ++i) {
    witness(bounds.indices[i]) = 0.5 * (bounds.lower(i) + bounds.upper(i));
  }
  return ConstraintSet(std::move(cs), witness);
}

ConstraintSet make_norm_ball(std::shared_ptr<const SpdMatrix> c0, double radius) {
  if (!c0) throw InvalidInput("norm ball needs a metric");
  const Index d = c0->size();
  auto ball = std::make_shared<NormBallConstraint>(std::move(c0), radius);
  return ConstraintSet({ball}, Vector::Zero(d));
}

double barrier_value(const ConstraintSet& cs, const Vector& u, double tau) {
  if (!(tau > 0.0)) throw InvalidInput("barrier parameter tau must be positive");
  double sum = 0.0;
  for (Index i = 0; i < cs.size(); ++i) {
    const double h = cs[i].value(u);
    if (!(h < 0.0)) return kInfiniteBarrier;
    sum += std::log(-h);
  }
  return -sum / tau;
}

Vector barrier_drift(const ConstraintSet& cs, const Vector& u, double tau) {
  if (!(tau > 0.0)) throw InvalidInput("barrier parameter tau must be positive");
  Vector drift = Vector::Zero(u.size());
  for (Index i = 0; i < cs.size(); ++i) {
    const double h = cs[i].value(u);
    if (!(h < -cs[i].margin_epsilon())) {
      std::ostringstream os;
      os << "constraint " << i << " within feasibility margin (h = " << h << ")";
      throw FeasibilityMarginError(os.str(), h);
    }
    cs[i].add_gradient(u, 1.0 / (tau * h), drift);
  }
  return drift;
}

Vector project_box(const BoxBounds& bounds, const Vector& u) {
  Vector out = u;
  for (std::size_t i = 0; i < bounds.indices.size(); ++i) {
    const Index k = bounds.indices[i];
    const auto ii = static_cast<Index>(i);
    out(k) = std::clamp(u(k), bounds.lower(ii), bounds.upper(ii));
  }
  return out;
}

double feasibility_margin(const ConstraintSet& cs, const Vector& u) {
  double worst = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < cs.size(); ++i) worst = std::max(worst, cs[i].value(u));
  return worst;
}

}  // namespace beki
