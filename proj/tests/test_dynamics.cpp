#include <doctest.h>

#include <cmath>
#include <numbers>

#include "beki/dynamics.hpp"
#include "beki/errors.hpp"

using namespace beki;

namespace {

std::shared_ptr<const SpdMatrix> identity(Index n) {
  return std::make_shared<const SpdMatrix>(SpdMatrix::identity(n));
}

std::shared_ptr<const SpdMatrix> random_spd(Index n, Rng& rng) {
  const Matrix b = standard_normal(n, n, rng);
  return std::make_shared<const SpdMatrix>(Matrix(b * b.transpose() + Matrix::Identity(n, n)));
}

ForwardModel scalar_identity_model() {
  ForwardModel m;
  m.map = std::make_shared<LinearMap>(Matrix::Identity(1, 1));
  m.y = Vector::Zero(1);
  m.noise_cov = identity(1);
  m.prior_cov = identity(1);
  return m;
}

Ensemble symmetric_pair() {
  Matrix p(1, 2);
  p << -1.0, 1.0;
  return Ensemble(p);
}

// d = 2 * k inputs, pseudolinear forward map with general Γ and C0.
FlowSpec seeded_spec(Index d, std::uint64_t seed, FlowVariant variant) {
  Rng rng(seed);
  FlowSpec spec;
  spec.variant = variant;
  spec.model.map = std::make_shared<PseudolinearMap>(standard_normal(d, d, rng), 0.2);
  spec.model.y = standard_normal(d, 1, rng);
  spec.model.noise_cov = random_spd(d, rng);
  spec.model.prior_cov = random_spd(d, rng);
  spec.lambda = 0.3;
  spec.inflation = {InflationKind::kConstant, 0.6, 0.0};
  spec.penalty = {PenaltyKind::kConstant, 5.0};
  if (spec.uses_barrier()) spec.constraints = make_box(BoxBounds::uniform(d, -10.0, 10.0));
  return spec;
}

Matrix seeded_particles(Index d, Index j, std::uint64_t seed) {
  Rng rng(seed);
  return standard_normal(d, j, rng);
}

}  // namespace

TEST_CASE("plain EKI drift examples") {
  const ForwardModel m = scalar_identity_model();
  const Matrix drift = rhs_plain_eki(symmetric_pair(), m);
  CHECK(drift(0, 0) == doctest::Approx(1.0));
  CHECK(drift(0, 1) == doctest::Approx(-1.0));

  const Ensemble same(Matrix::Constant(1, 3, 0.4));
  CHECK(rhs_plain_eki(same, m).norm() == 0.0);
}

TEST_CASE("plain EKI with a linear map is a preconditioned gradient flow") {
  Rng rng(2);
  const Matrix a = standard_normal(5, 3, rng);
  ForwardModel m;
  m.map = std::make_shared<LinearMap>(a);
  m.y = standard_normal(5, 1, rng);
  m.noise_cov = random_spd(5, rng);
  m.prior_cov = identity(3);
  const Ensemble ens(seeded_particles(3, 6, 4));
  const Matrix drift = rhs_plain_eki(ens, m);
  const EnsembleStats s = compute_stats(ens);
  for (Index j = 0; j < 6; ++j) {
    const Vector expected =
        -s.cov * a.transpose() * m.noise_cov->solve(Vector(a * ens.particle(j) - m.y));
    CHECK((drift.col(j) - expected).norm() <= 1e-12 * std::max(1.0, expected.norm()));
  }
}

TEST_CASE("barrier-mean drift example") {
  FlowSpec spec;
  spec.variant = FlowVariant::kBarrierMean;
  spec.model = scalar_identity_model();
  spec.lambda = 0.0;
  spec.constraints = ConstraintSet({std::make_shared<AffineConstraint>(
      std::vector<AffineConstraint::Term>{{0, 1.0}}, -2.0)});
  spec.penalty = {PenaltyKind::kConstant, 1.0};
  const Matrix drift = rhs_constrained(symmetric_pair(), spec, 0.0);
  CHECK(drift(0, 0) == doctest::Approx(0.5));
  CHECK(drift(0, 1) == doctest::Approx(-1.5));

  const Ensemble same(Matrix::Constant(1, 4, 0.3));
  CHECK(rhs_constrained(same, spec, 0.0).norm() == 0.0);
}

TEST_CASE("flow spec validation") {
  FlowSpec spec = seeded_spec(2, 1, FlowVariant::kBarrierMean);
  CHECK_NOTHROW(spec.validate());
  FlowSpec bad = spec;
  bad.constraints = ConstraintSet{};
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  bad = spec;
  bad.lambda = -1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  bad = spec;
  bad.inflation.rho0 = 1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  bad = spec;
  bad.penalty.tau0 = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("mean drift matches the mean dynamics for any inflation") {
  for (FlowVariant variant : {FlowVariant::kTikhonovEki, FlowVariant::kBarrierMean}) {
    FlowSpec spec = seeded_spec(4, 7, variant);
    const Ensemble ens(seeded_particles(4, 5, 8));
    const EnsembleStats s = compute_stats(ens, spec.model.map->apply_columns(ens.particles()));
    Vector v = -s.cross_cov * spec.model.noise_cov->solve(Vector(s.mean_g - spec.model.y)) -
               spec.lambda * s.cov * spec.model.prior_cov->solve(s.mean);
    if (spec.uses_barrier()) v += s.cov * barrier_drift(spec.constraints, s.mean, 5.0);
    for (double rho : {0.0, 0.3, 0.8, 0.99}) {
      spec.inflation.rho0 = rho;
      const Vector mean_drift = rhs_constrained(ens, spec, 1.0).rowwise().mean();
      CHECK((mean_drift - v).norm() <= 1e-12 * std::max(1.0, v.norm()));
    }
  }
}

TEST_CASE("centered dynamics identity") {
  for (FlowVariant variant : {FlowVariant::kTikhonovEki, FlowVariant::kBarrierMean,
                              FlowVariant::kBarrierPerParticle}) {
    FlowSpec spec = seeded_spec(2, 11, variant);
    spec.inflation.beta = 0.25;
    const Ensemble ens(seeded_particles(2, 3, 12));
    const Matrix full = rhs_constrained(ens, spec, 0.5);
    const Matrix expected = full.colwise() - full.rowwise().mean();
    const Matrix centered = rhs_centered(ens, spec, 0.5);
    CHECK((centered - expected).norm() <= 1e-12 * std::max(1.0, expected.norm()));
  }
}

TEST_CASE("centered drift vanishes with full inflation and no regularization") {
  FlowSpec spec = seeded_spec(3, 13, FlowVariant::kBarrierMean);
  spec.inflation.rho0 = 1.0;
  spec.lambda = 0.0;
  const Ensemble ens(seeded_particles(3, 4, 14));
  CHECK(rhs_centered(ens, spec, 0.0).norm() == 0.0);
}

TEST_CASE("centered drift of barrier-mean does not depend on tau") {
  FlowSpec spec = seeded_spec(3, 15, FlowVariant::kBarrierMean);
  const Ensemble ens(seeded_particles(3, 4, 16));
  spec.penalty.tau0 = 1.0;
  const Matrix a = rhs_centered(ens, spec, 0.0);
  spec.penalty.tau0 = 1e6;
  const Matrix b = rhs_centered(ens, spec, 0.0);
  CHECK((a - b).norm() == 0.0);
}

TEST_CASE("schedules") {
  const PenaltySchedule constant_tau{PenaltyKind::kConstant, 7.0};
  const InflationSchedule log_inc{InflationKind::kLogIncreasing, 0.0, 0.0};
  CHECK(eval_schedules(log_inc, constant_tau, 0.0).rho == doctest::Approx(0.0));
  double prev = -1.0;
  for (double t : {0.0, 0.1, 1.0, 10.0, 1e3, 1e6, 1e12}) {
    const ScheduleValues v = eval_schedules(log_inc, constant_tau, t);
    CHECK(v.rho >= prev);
    CHECK(v.rho < 1.0);
    CHECK(v.rho == doctest::Approx(1.0 - 1.0 / std::log(t + std::numbers::e)));
    CHECK(v.tau == 7.0);
    prev = v.rho;
  }
  const InflationSchedule c08{InflationKind::kConstant, 0.8, 0.0};
  for (double t : {0.0, 3.0, 1e5}) CHECK(eval_schedules(c08, constant_tau, t).rho == 0.8);
  CHECK(eval_schedules({}, {PenaltyKind::kLinear, 1.0}, 99.0).tau == 100.0);
  CHECK(eval_schedules({}, constant_tau, 5.0).rho == 0.0);
}

TEST_CASE("names round trip") {
  for (FlowVariant v : {FlowVariant::kPlainEki, FlowVariant::kTikhonovEki, FlowVariant::kBarrierMean,
                        FlowVariant::kBarrierPerParticle}) {
    CHECK(parse_flow_variant(to_string(v)) == v);
  }
  for (InflationKind k : {InflationKind::kOff, InflationKind::kConstant, InflationKind::kLogIncreasing}) {
    CHECK(parse_inflation_kind(to_string(k)) == k);
  }
  for (PenaltyKind k : {PenaltyKind::kConstant, PenaltyKind::kLinear}) {
    CHECK(parse_penalty_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_flow_variant("nope"), UsageError);
}

TEST_CASE("linear model drift is the preconditioned regularized gradient") {
  Rng rng(30);
  const Index d = 4;
  const Matrix a = standard_normal(d, d, rng);
  FlowSpec spec;
  spec.variant = FlowVariant::kTikhonovEki;
  spec.model.map = std::make_shared<LinearMap>(a);
  spec.model.y = standard_normal(d, 1, rng);
  spec.model.noise_cov = random_spd(d, rng);
  spec.model.prior_cov = random_spd(d, rng);
  spec.lambda = 0.05;
  spec.inflation = {InflationKind::kOff, 0.0, 0.0};
  const RegularizedPotential pot{spec.model, spec.lambda};
  const Ensemble ens(seeded_particles(d, 6, 31));
  const Matrix drift = rhs_constrained(ens, spec, 0.0);
  const EnsembleStats s = compute_stats(ens);
  for (Index j = 0; j < ens.size(); ++j) {
    const Vector expected = -s.cov * grad_phi_reg(pot, ens.particle(j));
    CHECK((drift.col(j) - expected).norm() <= 1e-10 * std::max(1.0, expected.norm()));
  }
}

TEST_CASE("spread is dissipated") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    FlowSpec spec = seeded_spec(3, seed, seed % 2 ? FlowVariant::kTikhonovEki : FlowVariant::kBarrierMean);
    spec.inflation.rho0 = 0.1 * static_cast<double>(seed % 10);
    const Ensemble ens(seeded_particles(3, 5, 1000 + seed));
    const Matrix e = compute_stats(ens).centered;
    const Matrix de = rhs_centered(ens, spec, 0.0);
    const double dv = (e.array() * de.array()).sum() / ens.size();
    CHECK(dv <= 1e-14);
  }
}

TEST_CASE("drifts stay in the ensemble span") {
  for (FlowVariant variant : {FlowVariant::kPlainEki, FlowVariant::kTikhonovEki,
                              FlowVariant::kBarrierMean, FlowVariant::kBarrierPerParticle}) {
    const FlowSpec spec = seeded_spec(8, 40, variant);
    const Ensemble ens(seeded_particles(8, 4, 41));
    const AffineSubspace sub = AffineSubspace::from_ensemble(ens);
    const Matrix drift = variant == FlowVariant::kPlainEki ? rhs_plain_eki(ens, spec.model)
                                                           : rhs_constrained(ens, spec, 0.0);
    for (Index j = 0; j < ens.size(); ++j) {
      const Vector dj = drift.col(j);
      CHECK((dj - sub.project_direction(dj)).norm() <= 1e-10 * std::max(1.0, dj.norm()));
    }
  }
}

TEST_CASE("barrier drift near the boundary raises a margin error") {
  FlowSpec spec = seeded_spec(2, 50, FlowVariant::kBarrierMean);
  spec.constraints = make_box(BoxBounds::uniform(2, -1.0, 1.0));
  Matrix p(2, 2);
  p << 0.5, 1.5, 0.0, 0.0;  // mean (1, 0) on the boundary
  CHECK_THROWS_AS(rhs_constrained(Ensemble(p), spec, 0.0), FeasibilityMarginError);
}
