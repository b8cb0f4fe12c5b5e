#include <doctest.h>

#include <cmath>

#include "beki/errors.hpp"
#include "beki/potentials.hpp"

using namespace beki;

namespace {

std::shared_ptr<const SpdMatrix> identity(Index n) {
  return std::make_shared<const SpdMatrix>(SpdMatrix::identity(n));
}

ForwardModel identity_model(Index d, Vector y, std::shared_ptr<const SpdMatrix> gamma = nullptr) {
  ForwardModel m;
  m.map = std::make_shared<LinearMap>(Matrix::Identity(d, d));
  m.y = std::move(y);
  m.noise_cov = gamma ? gamma : identity(d);
  m.prior_cov = identity(d);
  return m;
}

Vector scalar(double x) { return Vector::Constant(1, x); }

RegularizedPotential pseudolinear_1d(double y, double lambda) {
  RegularizedPotential pot;
  pot.model.map = std::make_shared<PseudolinearMap>(Matrix::Ones(1, 1), 0.1);
  pot.model.y = scalar(y);
  pot.model.noise_cov = identity(1);
  pot.model.prior_cov = identity(1);
  pot.lambda = lambda;
  return pot;
}

Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& u) {
  Vector g(u.size());
  for (Index i = 0; i < u.size(); ++i) {
    const double h = 1e-6 * (1.0 + std::abs(u(i)));
    Vector up = u, um = u;
    up(i) += h;
    um(i) -= h;
    g(i) = (f(up) - f(um)) / (2 * h);
  }
  return g;
}

// Seeded pseudolinear problem with general SPD Γ and C0.
RegularizedPotential seeded_pseudolinear(Index d, std::uint64_t seed) {
  Rng rng(seed);
  const Matrix a = standard_normal(d, d, rng);
  const Matrix bg = standard_normal(d, d, rng);
  const Matrix bc = standard_normal(d, d, rng);
  RegularizedPotential pot;
  pot.model.map = std::make_shared<PseudolinearMap>(a, 0.3);
  pot.model.y = standard_normal(d, 1, rng);
  pot.model.noise_cov =
      std::make_shared<const SpdMatrix>(Matrix(bg * bg.transpose() + Matrix::Identity(d, d)));
  pot.model.prior_cov =
      std::make_shared<const SpdMatrix>(Matrix(bc * bc.transpose() + Matrix::Identity(d, d)));
  pot.lambda = 0.7;
  return pot;
}

}  // namespace

TEST_CASE("misfit examples") {
  Vector u(2);
  u << 1.0, 1.0;
  CHECK(phi_misfit(identity_model(2, u), u) == 0.0);
  CHECK(phi_misfit(identity_model(2, Vector::Zero(2)), u) == doctest::Approx(1.0));
  const auto gamma4 = std::make_shared<const SpdMatrix>(SpdMatrix::scaled_identity(1, 4.0));
  CHECK(phi_misfit(identity_model(1, scalar(0.0), gamma4), scalar(2.0)) == doctest::Approx(0.5));
}

TEST_CASE("regularized potential examples") {
  RegularizedPotential pot{identity_model(2, Vector::Zero(2)), 1.0};
  CHECK(phi_reg(pot, Vector::Ones(2)) == doctest::Approx(2.0));
  CHECK(phi_reg(pot, Vector::Zero(2)) == 0.0);

  const RegularizedPotential pl = pseudolinear_1d(0.5, 1.0);
  const double u = 0.3;
  const double r = u + 0.1 * std::sin(u) - 0.5;
  CHECK(std::abs(phi_reg(pl, scalar(u)) - (0.5 * r * r + 0.5 * u * u)) <= 1e-12);
}

TEST_CASE("regularized gradient examples") {
  Rng rng(3);
  RegularizedPotential lin;
  lin.model.map = std::make_shared<LinearMap>(standard_normal(4, 3, rng));
  lin.model.y = Vector::Zero(4);
  lin.model.noise_cov = identity(4);
  lin.model.prior_cov = identity(3);
  lin.lambda = 2.0;
  CHECK(grad_phi_reg(lin, Vector::Zero(3)).norm() == 0.0);

  RegularizedPotential quad{identity_model(3, Vector::Zero(3)), 1.0};
  const Vector u = standard_normal(3, 1, rng);
  CHECK((grad_phi_reg(quad, u) - 2.0 * u).norm() <= 1e-14);
}

TEST_CASE("gradients agree with finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const RegularizedPotential pot = seeded_pseudolinear(3, seed);
    Rng rng(100 + seed);
    for (int i = 0; i < 20; ++i) {
      const Vector u = standard_normal(3, 1, rng);
      const Vector g = grad_phi_reg(pot, u);
      const Vector fd = central_difference([&](const Vector& x) { return phi_reg(pot, x); }, u);
      CHECK((g - fd).norm() <= 1e-6 * std::max(1.0, g.norm()));
      CHECK((grad_phi_misfit(pot.model, u) -
             central_difference([&](const Vector& x) { return phi_misfit(pot.model, x); }, u))
                .norm() <= 1e-6 * std::max(1.0, g.norm()));
    }
  }
}

TEST_CASE("forward-map jacobians agree with finite differences") {
  Rng rng(8);
  const PseudolinearMap map(standard_normal(4, 4, rng), 0.5);
  for (int i = 0; i < 20; ++i) {
    const Vector u = standard_normal(4, 1, rng);
    const Matrix jac = map.jacobian(u);
    for (Index k = 0; k < 4; ++k) {
      const Vector fd = central_difference([&](const Vector& x) { return map.apply(x)(k); }, u);
      CHECK((jac.row(k).transpose() - fd).norm() <= 1e-5 * std::max(1.0, fd.norm()));
    }
    const Vector w = standard_normal(4, 1, rng);
    CHECK((map.jacobian_transpose_apply(u, w) - jac.transpose() * w).norm() <= 1e-12);
  }
}

TEST_CASE("gradient needs a jacobian") {
  RegularizedPotential pot;
  pot.model.map = std::make_shared<FunctionMap>(2, 2, [](const Vector& u) { return u; });
  pot.model.y = Vector::Zero(2);
  pot.model.noise_cov = identity(2);
  pot.model.prior_cov = identity(2);
  pot.lambda = 1.0;
  CHECK(phi_reg(pot, Vector::Ones(2)) == doctest::Approx(2.0));
  CHECK_THROWS_AS(grad_phi_reg(pot, Vector::Ones(2)), UnsupportedOperation);
}

TEST_CASE("model validation") {
  ForwardModel m = identity_model(2, Vector::Zero(3));
  CHECK_THROWS_AS(m.validate(), InvalidInput);
  m = identity_model(2, Vector::Zero(2));
  CHECK_NOTHROW(m.validate());
  m.prior_cov = identity(3);
  CHECK_THROWS_AS(m.validate(), InvalidInput);
}

TEST_CASE("barrier potential examples") {
  RegularizedPotential base{identity_model(1, scalar(0.0)), 0.0};
  // Φ = ½u² via the misfit with y = 0.
  BarrierPotential empty{base, ConstraintSet{}, 3.0};
  const Vector u = scalar(0.7);
  CHECK(phi_barrier(empty, u) == phi_reg(base, u));

  auto h = std::make_shared<AffineConstraint>(std::vector<AffineConstraint::Term>{{0, -1.0}}, 1.0);
  BarrierPotential bp{base, ConstraintSet({h}), 4.0};
  CHECK(phi_barrier(bp, scalar(1.5)) == doctest::Approx(1.125 - 0.25 * std::log(0.5)).epsilon(1e-14));
  CHECK(phi_barrier(bp, scalar(1.5)) == doctest::Approx(1.2983).epsilon(1e-4));
  CHECK(grad_phi_barrier(bp, scalar(1.5))(0) == doctest::Approx(1.0).epsilon(1e-14));

  CHECK(phi_barrier(bp, scalar(0.5)) == kInfiniteBarrier);
  CHECK_THROWS_AS(grad_phi_barrier(bp, scalar(0.5)), FeasibilityMarginError);
}

TEST_CASE("barrier gradient agrees with finite differences") {
  const RegularizedPotential pot = seeded_pseudolinear(3, 21);
  auto ball = std::make_shared<NormBallConstraint>(pot.model.prior_cov, 2.0);
  const BarrierPotential bp{pot, ConstraintSet({ball}), 5.0};
  Rng rng(22);
  int n = 0;
  while (n < 50) {
    const Vector u = standard_normal(3, 1, rng);
    if (ball->value(u) > -0.1) continue;
    const Vector g = grad_phi_barrier(bp, u);
    const Vector fd = central_difference([&](const Vector& x) { return phi_barrier(bp, x); }, u);
    CHECK((g - fd).norm() <= 1e-5 * std::max(1.0, g.norm()));
    ++n;
  }
}

TEST_CASE("barrier potential approaches the regularized potential as tau grows") {
  const RegularizedPotential pot = seeded_pseudolinear(3, 4);
  const ConstraintSet box = make_box(BoxBounds::uniform(3, -2.0, 2.0));
  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    const Vector u = 0.5 * standard_normal(3, 1, rng);
    double prev = kInfiniteBarrier;
    for (double tau : {1e2, 1e4, 1e6}) {
      const double diff = std::abs(phi_barrier(BarrierPotential{pot, box, tau}, u) - phi_reg(pot, u));
      CHECK(diff < prev);
      prev = diff;
    }
  }
}

TEST_CASE("regularized potential is nonnegative") {
  const RegularizedPotential pot = seeded_pseudolinear(4, 12);
  Rng rng(13);
  for (int i = 0; i < 500; ++i) CHECK(phi_reg(pot, 3.0 * standard_normal(4, 1, rng)) >= 0.0);
}

TEST_CASE("strong convexity threshold of the pseudolinear functional") {
  const Matrix a = Matrix::Ones(1, 1);
  const Vector y = scalar(0.5);
  const auto rep = check_strong_convexity_pseudolinear(a, 0.1, 1.0, y, 2.0);
  CHECK(rep.threshold == doctest::Approx(0.66).epsilon(1e-14));
  CHECK(rep.satisfied);
  CHECK(rep.a_max == 1.0);
  CHECK(rep.y_max == 0.5);
  CHECK(rep.sampled_min_hessian_eig > 0.0);

  const auto below = check_strong_convexity_pseudolinear(a, 0.1, rep.threshold - 1e-6, y, 2.0);
  CHECK_FALSE(below.satisfied);
  const auto at = check_strong_convexity_pseudolinear(a, 0.1, rep.threshold, y, 2.0);
  CHECK_FALSE(at.satisfied);
}

TEST_CASE("linear case has a zero threshold") {
  Rng rng(40);
  const Matrix a = standard_normal(3, 3, rng);
  const Vector y = standard_normal(3, 1, rng);
  const double lambda = 0.05;
  const auto rep = check_strong_convexity_pseudolinear(a, 0.0, lambda, y, 5.0);
  CHECK(rep.threshold == 0.0);
  CHECK(rep.satisfied);
  CHECK(rep.sampled_min_hessian_eig >= lambda - 1e-12);
  const Matrix hess = pseudolinear_hessian(a, 0.0, lambda, y, Vector::Zero(3));
  CHECK((hess - (a.transpose() * a + lambda * Matrix::Identity(3, 3))).norm() <= 1e-12);
}

TEST_CASE("pseudolinear hessian agrees with finite differences of the gradient") {
  Rng rng(41);
  const Matrix a = standard_normal(3, 3, rng);
  const Vector y = standard_normal(3, 1, rng);
  RegularizedPotential pot;
  pot.model.map = std::make_shared<PseudolinearMap>(a, 0.4);
  pot.model.y = y;
  pot.model.noise_cov = identity(3);
  pot.model.prior_cov = identity(3);
  pot.lambda = 0.3;
  for (int i = 0; i < 10; ++i) {
    const Vector x = standard_normal(3, 1, rng);
    const Matrix hess = pseudolinear_hessian(a, 0.4, 0.3, y, x);
    for (Index c = 0; c < 3; ++c) {
      const Vector fd =
          central_difference([&](const Vector& z) { return grad_phi_reg(pot, z)(c); }, x);
      CHECK((hess.row(c).transpose() - fd).norm() <= 1e-5 * std::max(1.0, hess.norm()));
    }
  }
}

TEST_CASE("PL inequality for strongly convex quadratics") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    const Index d = 4;
    const Matrix a = standard_normal(d + 2, d, rng);
    RegularizedPotential pot;
    pot.model.map = std::make_shared<LinearMap>(a);
    pot.model.y = standard_normal(d + 2, 1, rng);
    pot.model.noise_cov = identity(d + 2);
    pot.model.prior_cov = identity(d);
    pot.lambda = 0.1;
    const Matrix h = a.transpose() * a + pot.lambda * Matrix::Identity(d, d);
    const double mu = Eigen::SelfAdjointEigenSolver<Matrix>(h).eigenvalues()(0);
    const Vector x_star = h.ldlt().solve(a.transpose() * pot.model.y);
    const double f_star = phi_reg(pot, x_star);
    for (int i = 0; i < 200; ++i) {
      const Vector x = x_star + 3.0 * Vector(standard_normal(d, 1, rng));
      const double g2 = grad_phi_reg(pot, x).squaredNorm();
      CHECK(g2 / (2.0 * mu) - (phi_reg(pot, x) - f_star) >= -1e-10);
    }
  }
}
