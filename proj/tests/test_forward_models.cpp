#include <doctest.h>

#include <cmath>
#include <numbers>

#include "beki/errors.hpp"
#include "beki/forward_models.hpp"

using namespace beki;

namespace {

constexpr double kPi = std::numbers::pi;

// Center value of -Δp = 1 on the unit square with zero boundary data, from
// the double sine series.
double poisson_center_series() {
  double p = 0.0;
  for (int m = 1; m < 400; m += 2) {
    for (int n = 1; n < 400; n += 2) {
      const double coeff = 16.0 / (kPi * kPi * kPi * kPi * m * n * (double(m) * m + double(n) * n));
      p += coeff * std::sin(m * kPi / 2) * std::sin(n * kPi / 2);
    }
  }
  return p;
}

double darcy_center(int n) {
  const Darcy2DModel model(n, 1.0, 5, 1);
  const DarcySolution sol = model.solve(Vector::Zero(model.input_dim()));
  return model.interpolate(sol.pressure, 0.5, 0.5);
}

}  // namespace

TEST_CASE("heat model dimensions and structure") {
  const Heat1DModel heat = build_heat1d(0.01, 0.05, 0.1);
  CHECK(heat.n_interior == 99);
  CHECK(heat.a.rows() == 99);
  CHECK((heat.a - heat.a.transpose()).norm() == 0.0);
  CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(heat.a).eigenvalues().minCoeff() > 0.0);
  CHECK(heat.grid(0) == doctest::Approx(0.01));
  CHECK(heat.grid(98) == doctest::Approx(0.99));
  CHECK(heat.map()->apply(Vector::Zero(99)).norm() == 0.0);
  CHECK_THROWS_AS(build_heat1d(0.3, 0.05, 0.1), InvalidInput);
  CHECK_THROWS_AS(build_heat1d(0.01, 0.0, 0.1), InvalidInput);
}

TEST_CASE("heat operator acts on the discrete sine mode by a scalar") {
  const double dx = 0.01, dt = 0.05;
  const Heat1DModel heat = build_heat1d(dx, dt, 0.0);
  const Vector f = (kPi * heat.grid.array()).sin().matrix();
  const double mu = (2.0 / (dx * dx)) * (1.0 - std::cos(kPi * dx));
  const Vector expected = (dt / (1.0 + dt * mu)) * f;
  CHECK((heat.a * f - expected).norm() <= 1e-10 * expected.norm());
}

TEST_CASE("heat jacobian agrees with finite differences") {
  const Heat1DModel heat = build_heat1d(0.05, 0.05, 0.3);
  const auto map = heat.map();
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Vector u = standard_normal(heat.n_interior, 1, rng);
    const Matrix jac = map->jacobian(u);
    Matrix fd(jac.rows(), jac.cols());
    for (Index i = 0; i < u.size(); ++i) {
      const double h = 1e-6 * (1.0 + std::abs(u(i)));
      Vector up = u, um = u;
      up(i) += h;
      um(i) -= h;
      fd.col(i) = (map->apply(up) - map->apply(um)) / (2 * h);
    }
    CHECK((jac - fd).norm() <= 1e-6 * jac.norm());
  }
}

TEST_CASE("1D KL prior") {
  const Heat1DModel heat = build_heat1d();
  const KLPrior1D prior = KLPrior1D::build(heat.grid, 10.0, 0.1, 12);
  CHECK(prior.eigenvalues.size() == 12);
  for (Index i = 1; i < 12; ++i) CHECK(prior.eigenvalues(i) <= prior.eigenvalues(i - 1));
  CHECK(prior.eigenvalues(11) > 0.0);
  CHECK((prior.eigenvectors.transpose() * prior.eigenvectors - Matrix::Identity(12, 12)).norm() <=
        1e-10);
  CHECK(kl_field_1d(prior, Matrix::Zero(12, 3)).norm() == 0.0);

  const Matrix a = sample_kl_1d(prior, 4, 77);
  const Matrix b = sample_kl_1d(prior, 4, 77);
  CHECK((a - b).norm() == 0.0);
  CHECK((a - sample_kl_1d(prior, 4, 78)).norm() > 0.0);

  CHECK_THROWS_AS(KLPrior1D::build(heat.grid, 10.0, 0.1, 0), InvalidInput);
  CHECK_THROWS_AS(KLPrior1D::build(heat.grid, 10.0, 0.1, 100), InvalidInput);
  CHECK_THROWS_AS(KLPrior1D::build(heat.grid, -1.0, 0.1, 12), InvalidInput);
}

TEST_CASE("1D KL samples have the truncated covariance and zero mean") {
  const Heat1DModel heat = build_heat1d();
  const KLPrior1D prior = KLPrior1D::build(heat.grid, 10.0, 0.1, 12);
  const Index n = 10000;
  const Matrix s = sample_kl_1d(prior, n, 2024);
  const Matrix target = prior.eigenvectors * prior.eigenvalues.asDiagonal() *
                        prior.eigenvectors.transpose();
  const Vector mean = s.rowwise().mean();
  const Matrix cov = (s * s.transpose()) / static_cast<double>(n);

  // Entries whose target value is within a factor two of the largest one.
  const double top = target.maxCoeff();
  int compared = 0;
  for (Index i = 0; i < target.rows(); ++i) {
    for (Index j = 0; j < target.cols(); ++j) {
      if (target(i, j) < 0.5 * top) continue;
      CHECK(std::abs(cov(i, j) - target(i, j)) <= 0.05 * target(i, j));
      ++compared;
    }
  }
  CHECK(compared > 99);
  CHECK(mean.norm() <= 3.0 * std::sqrt(target.trace() / n));
}

TEST_CASE("1D prior covariance adds a scaled nugget") {
  const Heat1DModel heat = build_heat1d(0.05);
  const KLPrior1D prior = KLPrior1D::build(heat.grid, 10.0, 0.1, 5);
  const Matrix c = prior.covariance(1e-3);
  const double lmax = Eigen::SelfAdjointEigenSolver<Matrix>(prior.kernel).eigenvalues().maxCoeff();
  CHECK((c - prior.kernel - 1e-3 * lmax * Matrix::Identity(c.rows(), c.cols())).norm() <= 1e-10);
}

TEST_CASE("Darcy Poisson center value") {
  const double series = poisson_center_series();
  CHECK(series == doctest::Approx(0.07367).epsilon(1e-3));
  CHECK(std::abs(darcy_center(32) - series) <= 2e-3);
}

TEST_CASE("Darcy refinement order") {
  const double exact = poisson_center_series();
  const double e8 = std::abs(darcy_center(8) - exact);
  const double e16 = std::abs(darcy_center(16) - exact);
  const double e32 = std::abs(darcy_center(32) - exact);
  const double order1 = std::log(e8 / e16) / std::log(15.0 / 7.0);
  const double order2 = std::log(e16 / e32) / std::log(31.0 / 15.0);
  CHECK(order1 == doctest::Approx(2.0).epsilon(0.25));
  CHECK(order2 == doctest::Approx(2.0).epsilon(0.25));
}

TEST_CASE("Darcy zero source and coefficient scaling") {
  const Darcy2DModel zero(8, 0.0, 10, 3);
  const DarcySolution z = zero.solve(Vector::Zero(64));
  CHECK(z.pressure.norm() == 0.0);
  CHECK(z.observations.norm() == 0.0);

  const Darcy2DModel model(10, 1.0, 20, 4);
  const DarcySolution base = model.solve(Vector::Zero(100));
  for (double c : {-1.5, 0.7, 2.0}) {
    const DarcySolution scaled = model.solve(Vector::Constant(100, c));
    CHECK((scaled.pressure - std::exp(-c) * base.pressure).norm() <=
          1e-10 * std::exp(-c) * base.pressure.norm());
  }
}

TEST_CASE("Darcy maximum principle") {
  const Darcy2DModel model(12, 1.0, 10, 5);
  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    const DarcySolution sol = model.solve(2.0 * Vector(standard_normal(144, 1, rng)));
    CHECK(sol.pressure.minCoeff() >= -1e-12);
  }
}

TEST_CASE("Darcy observations and derivatives") {
  const Darcy2DModel model(7, 1.0, 6, 11);
  CHECK(model.output_dim() == 6);
  for (Index k = 0; k < 6; ++k) {
    CHECK(model.obs_points()(k, 0) > 0.1);
    CHECK(model.obs_points()(k, 0) < 0.9);
    CHECK(model.obs_points()(k, 1) > 0.1);
    CHECK(model.obs_points()(k, 1) < 0.9);
  }
  Rng rng(12);
  const Vector u = 0.5 * standard_normal(49, 1, rng);
  const DarcySolution sol = model.solve(u);
  for (Index k = 0; k < 6; ++k) {
    CHECK(sol.observations(k) ==
          doctest::Approx(model.interpolate(sol.pressure, model.obs_points()(k, 0),
                                            model.obs_points()(k, 1))));
  }
  const Matrix jac = model.jacobian(u);
  for (Index i = 0; i < 49; ++i) {
    const double h = 1e-6 * (1.0 + std::abs(u(i)));
    Vector up = u, um = u;
    up(i) += h;
    um(i) -= h;
    const Vector fd = (model.apply(up) - model.apply(um)) / (2 * h);
    CHECK((jac.col(i) - fd).norm() <= 1e-6 * std::max(1e-8, jac.norm()));
  }
  const Vector w = standard_normal(6, 1, rng);
  CHECK((model.jacobian_transpose_apply(u, w) - jac.transpose() * w).norm() <= 1e-10 * jac.norm());

  Matrix pts(1, 2);
  pts << 0.25, 0.75;
  const Darcy2DModel explicit_obs(9, 1.0, pts);
  CHECK(explicit_obs.output_dim() == 1);
  CHECK(explicit_obs.node_coordinates().rows() == 81);
}

TEST_CASE("2D KL prior") {
  const Darcy2DModel model(9, 1.0, 5, 1);
  const Matrix nodes = model.node_coordinates();
  const KLPrior2D prior = KLPrior2D::build(nodes, 0.01, 2.0, 25);
  REQUIRE(prior.modes.size() == 25);
  CHECK(prior.modes[0] == std::pair<int, int>{1, 1});
  CHECK(prior.modes[1] == std::pair<int, int>{1, 2});
  CHECK(prior.modes[2] == std::pair<int, int>{2, 1});
  for (size_t j = 1; j < prior.modes.size(); ++j) {
    const auto [k0, l0] = prior.modes[j - 1];
    const auto [k1, l1] = prior.modes[j];
    CHECK(k0 * k0 + l0 * l0 <= k1 * k1 + l1 * l1);
    CHECK(prior.eigenvalues(j) <= prior.eigenvalues(j - 1));
    CHECK(prior.eigenvalues(j) > 0.0);
  }

  CHECK(kl_field_2d(prior, Matrix::Zero(25, 2)).norm() == 0.0);

  // Single (1,1) mode with unit weight: λ^{1/2} = (2π² + 1e-4)^{-1}.
  Matrix xi = Matrix::Zero(25, 1);
  xi(0, 0) = 1.0;
  const Vector field = kl_field_2d(prior, xi);
  const double amp = 1.0 / (2.0 * kPi * kPi + 1e-4);
  for (Index i = 0; i < nodes.rows(); ++i) {
    const double expected = amp * std::cos(kPi * nodes(i, 0)) * std::cos(kPi * nodes(i, 1));
    CHECK(std::abs(field(i) - expected) <= 1e-12);
  }

  // At the origin every cosine equals one.
  Rng rng(8);
  const Matrix w = standard_normal(25, 1, rng);
  const Vector f = kl_field_2d(prior, w);
  CHECK(f(0) == doctest::Approx(prior.eigenvalues.cwiseSqrt().dot(w.col(0))).epsilon(1e-12));

  CHECK((sample_kl_2d(prior, 3, 4) - sample_kl_2d(prior, 3, 4)).norm() == 0.0);
}

TEST_CASE("box from truth") {
  Vector u(3);
  u << -2.0, 0.5, 3.0;
  const BoxBounds b = make_box_from_truth(u, 0.3);
  CHECK(b.lower(0) == doctest::Approx(-1.4));
  CHECK(b.upper(0) == doctest::Approx(2.1));
  CHECK(b.indices.size() == 3);
  const BoxBounds exact = make_box_from_truth(u, 0.0);
  CHECK(exact.lower(2) == -2.0);
  CHECK(exact.upper(1) == 3.0);
  CHECK_THROWS_AS(make_box_from_truth(Vector::Constant(3, 1.0), 0.3), InvalidBounds);
}
