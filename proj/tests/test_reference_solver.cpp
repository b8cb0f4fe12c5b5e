#include <doctest.h>

#include <cmath>

#include "beki/reference_solver.hpp"

using namespace beki;

namespace {

std::shared_ptr<const SpdMatrix> identity(Index n) {
  return std::make_shared<const SpdMatrix>(SpdMatrix::identity(n));
}

// Φ = ½‖u - c‖² (identity map, data c, no regularization).
RegularizedPotential shifted_quadratic(const Vector& c) {
  RegularizedPotential pot;
  pot.model.map = std::make_shared<LinearMap>(Matrix::Identity(c.size(), c.size()));
  pot.model.y = c;
  pot.model.noise_cov = identity(c.size());
  pot.model.prior_cov = identity(c.size());
  pot.lambda = 0.0;
  return pot;
}

Vector scalar(double x) { return Vector::Constant(1, x); }

// h(u) = 1 - u.
ConstraintSet lower_one() {
  return ConstraintSet({std::make_shared<AffineConstraint>(
      std::vector<AffineConstraint::Term>{{0, -1.0}}, 1.0)});
}

}  // namespace

TEST_CASE("one-dimensional barrier minimizer") {
  const BarrierPotential bp{shifted_quadratic(scalar(0.0)), lower_one(), 4.0};
  const BarrierSolveResult r = solve_barrier(bp, scalar(3.0));
  CHECK(r.converged);
  CHECK(std::abs(r.minimizer(0) - (1.0 + std::sqrt(2.0)) / 2.0) <= 1e-6);
  CHECK(r.grad_norm <= 1e-8);
  CHECK(r.objective == doctest::Approx(phi_barrier(bp, r.minimizer)));

  const BarrierSolveResult full = solve_barrier(bp, scalar(3.0), AffineSubspace::full_space(1));
  CHECK(full.converged);
  CHECK(std::abs(full.minimizer(0) - r.minimizer(0)) <= 1e-9);
}

TEST_CASE("unconstrained quadratic") {
  Vector c(3);
  c << 0.5, -1.0, 2.0;
  const BarrierPotential bp{shifted_quadratic(c), ConstraintSet{}, 1.0};
  const BarrierSolveResult r = solve_barrier(bp, Vector::Zero(3));
  CHECK(r.converged);
  CHECK((r.minimizer - c).norm() <= 1e-8);
}

TEST_CASE("subspace-restricted solve stays on the subspace") {
  Vector c(3);
  c << 1.0, 2.0, 3.0;
  const BarrierPotential bp{shifted_quadratic(c), make_box(BoxBounds::uniform(3, -5.0, 5.0)), 10.0};
  AffineSubspace sub;
  sub.offset = Vector::Zero(3);
  sub.offset(2) = 0.5;
  sub.basis = Matrix::Zero(3, 2);
  sub.basis(0, 0) = 1.0;
  sub.basis(1, 1) = 1.0;
  Vector x0 = sub.offset;
  const BarrierSolveResult r = solve_barrier(bp, x0, sub);
  CHECK(r.converged);
  CHECK(r.minimizer(2) == 0.5);
  // The restricted problem separates; coordinates 0 and 1 match the 1D
  // minimizers of ½(u - c)² - (1/τ)(log(u + 5) + log(5 - u)).
  for (Index i = 0; i < 2; ++i) {
    const double u = r.minimizer(i);
    CHECK(std::abs((u - c(i)) - 0.1 / (u + 5.0) + 0.1 / (5.0 - u)) <= 1e-8);
  }
  Vector off = sub.offset;
  off(2) = 0.6;
  CHECK_THROWS_AS(solve_barrier(bp, off, sub), InvalidStart);
}

TEST_CASE("infeasible start") {
  const BarrierPotential bp{shifted_quadratic(scalar(0.0)), lower_one(), 4.0};
  CHECK_THROWS_AS(solve_barrier(bp, scalar(1.0)), InvalidStart);
  CHECK_THROWS_AS(solve_barrier(bp, scalar(0.0)), InvalidStart);
  CHECK_THROWS_AS(solve_constrained(bp.base, bp.constraints, scalar(0.5)), InvalidStart);
}

TEST_CASE("iteration cap reports non-convergence") {
  Vector c = Vector::LinSpaced(5, -2.0, 2.0);
  const BarrierPotential bp{shifted_quadratic(c), make_box(BoxBounds::uniform(5, -3.0, 1.0)), 1e3};
  BarrierSolveOptions opt;
  opt.max_iter = 1;
  const BarrierSolveResult r = solve_barrier(bp, Vector::Constant(5, -2.9), std::nullopt, opt);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 1);
}

TEST_CASE("constrained KKT point of the one-dimensional problem") {
  const ConstrainedSolveResult res =
      solve_constrained(shifted_quadratic(scalar(0.0)), lower_one(), scalar(3.0));
  REQUIRE(res.stages.size() == default_tau_ladder().size());
  CHECK(res.stages.back().tau == 1e6);
  CHECK(std::abs(res.kkt.point(0) - 1.0) <= 1e-5);
  CHECK(std::abs(res.kkt.multipliers(0) - 1.0) <= 1e-5);
  CHECK(res.kkt.stationarity_norm <= 1e-4);
  CHECK(res.kkt.complementarity <= 1e-4);
  CHECK(res.kkt.primal_feasibility <= 0.0);
  CHECK(res.kkt.multipliers_nonnegative);
  CHECK(res.stage(1e3).tau == 1e3);
  CHECK_THROWS_AS(res.stage(5.0), InvalidInput);
}

TEST_CASE("inactive constraint") {
  const ConstraintSet upper = ConstraintSet({std::make_shared<AffineConstraint>(
      std::vector<AffineConstraint::Term>{{0, 1.0}}, -2.0)});
  const ConstrainedSolveResult res =
      solve_constrained(shifted_quadratic(scalar(0.5)), upper, scalar(0.0));
  CHECK(std::abs(res.kkt.point(0) - 0.5) <= 1e-5);
  CHECK(res.kkt.multipliers(0) >= 0.0);
  CHECK(res.kkt.multipliers(0) <= 1e-5);
}

TEST_CASE("ladder objectives decrease and respect the gap bound") {
  Vector c(3);
  c << 2.0, -3.0, 0.2;
  const RegularizedPotential pot = shifted_quadratic(c);
  const ConstraintSet box = make_box(BoxBounds::uniform(3, -1.0, 1.0));
  BarrierSolveOptions opt;
  opt.tol_grad = 1e-9;
  const ConstrainedSolveResult res =
      solve_constrained(pot, box, Vector::Zero(3), {1.0, 10.0, 100.0, 1e3, 1e4}, std::nullopt, opt);
  const double m = static_cast<double>(box.size());
  const double final_phi = res.stages.back().phi_reg;
  for (size_t i = 0; i < res.stages.size(); ++i) {
    if (i > 0) CHECK(res.stages[i].phi_reg < res.stages[i - 1].phi_reg);
    CHECK(res.stages[i].phi_reg - final_phi <= m / res.stages[i].tau + 10 * opt.tol_grad);
  }
  // Exact constrained optimum is the clamp of c with value ½(1² + 2²).
  for (const auto& st : res.stages) CHECK(st.phi_reg - 2.5 <= m / st.tau + 1e-8);
}

TEST_CASE("ladder failure carries the completed stages") {
  const RegularizedPotential pot = shifted_quadratic(Vector::LinSpaced(4, -3.0, 3.0));
  const ConstraintSet box = make_box(BoxBounds::uniform(4, -1.0, 1.0));
  BarrierSolveOptions opt;
  opt.max_iter = 3;
  try {
    solve_constrained(pot, box, Vector::Zero(4), {1.0, 1e6}, std::nullopt, opt);
    FAIL("expected a ladder failure");
  } catch (const LadderFailure& e) {
    CHECK(e.completed().size() <= 1);
  }
}

TEST_CASE("KKT residual evaluation") {
  const RegularizedPotential pot = shifted_quadratic(scalar(0.0));
  const ConstraintSet cs = lower_one();
  const KKTReport exact = kkt_residual(pot, cs, scalar(1.0), scalar(1.0));
  CHECK(exact.stationarity_norm <= 1e-14);
  CHECK(exact.complementarity <= 1e-14);
  CHECK(exact.primal_feasibility == 0.0);
  CHECK(exact.multipliers_nonnegative);

  const KKTReport interior = kkt_residual(pot, cs, scalar(2.0), scalar(0.0));
  CHECK(interior.stationarity_norm == doctest::Approx(2.0));
  CHECK(interior.complementarity == 0.0);
  CHECK(interior.primal_feasibility == doctest::Approx(-1.0));

  const KKTReport negative = kkt_residual(pot, cs, scalar(2.0), scalar(-0.5));
  CHECK_FALSE(negative.multipliers_nonnegative);
  CHECK(negative.stationarity_norm == doctest::Approx(2.5));
  CHECK(negative.complementarity == doctest::Approx(0.5));

  const KKTReport none = kkt_residual(pot, ConstraintSet{}, scalar(0.0), Vector());
  CHECK(none.primal_feasibility == -kInfiniteBarrier);
  CHECK_THROWS_AS(kkt_residual(pot, cs, scalar(1.0), Vector::Ones(2)), InvalidInput);
}

TEST_CASE("iterates decrease the objective and satisfy the PL bound") {
  Rng rng(17);
  const Index d = 4;
  const Matrix a = standard_normal(d, d, rng);
  RegularizedPotential pot;
  pot.model.map = std::make_shared<LinearMap>(a);
  pot.model.y = 3.0 * standard_normal(d, 1, rng);
  pot.model.noise_cov = identity(d);
  pot.model.prior_cov = identity(d);
  pot.lambda = 0.5;
  const BarrierPotential bp{pot, make_box(BoxBounds::uniform(d, -1.0, 1.0)), 5.0};
  // The barrier is convex, so Φ^b is at least as strongly convex as Φ^reg.
  const double mu = Eigen::SelfAdjointEigenSolver<Matrix>(
                        a.transpose() * a + pot.lambda * Matrix::Identity(d, d))
                        .eigenvalues()(0);
  const Vector x0 = Vector::Constant(d, 0.3);
  BarrierSolveOptions tight;
  tight.tol_grad = 1e-12;
  const BarrierSolveResult best = solve_barrier(bp, x0, std::nullopt, tight);
  REQUIRE(best.converged);

  double prev = phi_barrier(bp, x0);
  for (long k = 1; k <= 60; ++k) {
    BarrierSolveOptions opt;
    opt.max_iter = k;
    const BarrierSolveResult r = solve_barrier(bp, x0, std::nullopt, opt);
    CHECK(r.objective <= prev + 1e-14);
    prev = r.objective;
    const double g2 = grad_phi_barrier(bp, r.minimizer).squaredNorm();
    CHECK(r.objective - best.objective <= g2 / (2.0 * mu) + 1e-12);
    if (r.converged) break;
  }
}

TEST_CASE("solver is deterministic") {
  const BarrierPotential bp{shifted_quadratic(Vector::LinSpaced(3, -2.0, 2.0)),
                            make_box(BoxBounds::uniform(3, -1.0, 1.0)), 50.0};
  const BarrierSolveResult a = solve_barrier(bp, Vector::Zero(3));
  const BarrierSolveResult b = solve_barrier(bp, Vector::Zero(3));
  CHECK((a.minimizer - b.minimizer).norm() == 0.0);
  CHECK(a.iterations == b.iterations);
}
