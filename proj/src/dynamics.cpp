#include "beki/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "beki/errors.hpp"

namespace beki {

void FlowSpec::validate() const {
  model.validate();
  if (lambda < 0.0) throw InvalidInput("lambda must be nonnegative");
  if (uses_barrier() && constraints.empty()) {
    throw InvalidInput("barrier flow variants need at least one constraint");
  }
  if (inflation.kind == InflationKind::kConstant &&
      !(inflation.rho0 >= 0.0 && inflation.rho0 < 1.0)) {
    throw InvalidInput("constant inflation rho0 must lie in [0, 1)");
  }
  if (!(inflation.beta >= 0.0 && inflation.beta < 1.0)) {
    throw InvalidInput("inflation beta must lie in [0, 1)");
  }
  if (penalty.kind == PenaltyKind::kConstant && !(penalty.tau0 > 0.0)) {
    throw InvalidInput("penalty tau0 must be positive");
  }
}

ScheduleValues eval_schedules(const InflationSchedule& inflation,
                              const PenaltySchedule& penalty, double t) {
  ScheduleValues v;
  switch (inflation.kind) {
    case InflationKind::kOff:
      break;
    case InflationKind::kConstant:
      v.rho = inflation.rho0;
      v.beta = inflation.beta;
      break;
    case InflationKind::kLogIncreasing:
      v.rho = std::clamp(1.0 - 1.0 / std::log(t + std::numbers::e), 0.0, 1.0 - 1e-12);
      v.beta = inflation.beta;
      break;
  }
  v.tau = penalty.kind == PenaltyKind::kConstant ? penalty.tau0 : t + 1.0;
  return v;
}

Matrix rhs_plain_eki(const Ensemble& ens, const ForwardModel& model) {
  const Matrix g = model.map->apply_columns(ens.particles());
  const EnsembleStats s = compute_stats(ens, g);
  const Matrix w = model.noise_cov->solve(Matrix(g.colwise() - model.y));
  // Ĉ^{uG} W = E (G_cᵀ W) / J
  return -(s.centered * (s.centered_g.transpose() * w)) / static_cast<double>(ens.size());
}

namespace {

struct Centered {
  Vector mean;
  Matrix e;   // d x J
  Matrix gc;  // K x J
  double inv_j;
};

Centered center(const Ensemble& ens, const Matrix& g) {
  Centered c;
  c.mean = ens.mean();
  c.e = ens.particles().colwise() - c.mean;
  c.gc = g.colwise() - column_mean(g);
  c.inv_j = 1.0 / static_cast<double>(ens.size());
  return c;
}

// Ĉ X
Matrix cov_times(const Centered& c, const Matrix& x) {
  return c.inv_j * (c.e * (c.e.transpose() * x));
}

// Ĉ^{uG} X
Matrix cross_cov_times(const Centered& c, const Matrix& x) {
  return c.inv_j * (c.e * (c.gc.transpose() * x));
}

}  // namespace

Matrix rhs_constrained(const Ensemble& ens, const FlowSpec& spec, double t) {
  return rhs_constrained(ens, spec.model.map->apply_columns(ens.particles()), spec, t);
}

Matrix rhs_constrained(const Ensemble& ens, const Matrix& g_values, const FlowSpec& spec,
                       double t) {
  if (g_values.cols() != ens.size() || g_values.rows() != spec.model.data_dim()) {
    throw InvalidInput("forward outputs do not match ensemble");
  }
  const Centered c = center(ens, g_values);
  const SpdMatrix& gamma = *spec.model.noise_cov;

  if (spec.variant == FlowVariant::kPlainEki) {
    return -cross_cov_times(c, gamma.solve(Matrix(g_values.colwise() - spec.model.y)));
  }

  const ScheduleValues sched = eval_schedules(spec.inflation, spec.penalty, t);

  // Data part: -Ĉ^{uG} Γ^{-1} [(G_j - y) - ρ (G_j - Ḡ)]
  Matrix data_arg = g_values.colwise() - spec.model.y;
  data_arg -= sched.rho * c.gc;
  Matrix drift = -cross_cov_times(c, gamma.solve(data_arg));

  // Regularization: -λ Ĉ C0^{-1} [u_j - β (u_j - ū)]
  if (spec.lambda != 0.0) {
    Matrix reg_arg = ens.particles() - sched.beta * c.e;
    drift -= spec.lambda * cov_times(c, spec.model.prior_cov->solve(reg_arg));
  }

  if (spec.variant == FlowVariant::kBarrierMean) {
    const Vector b = barrier_drift(spec.constraints, c.mean, sched.tau);
    const Vector cb = cov_times(c, Matrix(b));
    drift.colwise() += cb;
  } else if (spec.variant == FlowVariant::kBarrierPerParticle) {
    Matrix b(ens.dim(), ens.size());
    for (Index j = 0; j < ens.size(); ++j) {
      b.col(j) = barrier_drift(spec.constraints, ens.particle(j), sched.tau);
    }
    drift += cov_times(c, b);
  }
  return drift;
}

Matrix rhs_centered(const Ensemble& ens, const FlowSpec& spec, double t) {
  const Matrix g = spec.model.map->apply_columns(ens.particles());
  const Centered c = center(ens, g);
  const SpdMatrix& gamma = *spec.model.noise_cov;

  if (spec.variant == FlowVariant::kPlainEki) {
    return -cross_cov_times(c, gamma.solve(c.gc));
  }
  const ScheduleValues sched = eval_schedules(spec.inflation, spec.penalty, t);
  Matrix drift = -(1.0 - sched.rho) * cross_cov_times(c, gamma.solve(c.gc));
  if (spec.lambda != 0.0) {
    drift -= (1.0 - sched.beta) * spec.lambda *
             cov_times(c, spec.model.prior_cov->solve(c.e));
  }
  if (spec.variant == FlowVariant::kBarrierPerParticle) {
    Matrix b(ens.dim(), ens.size());
    for (Index j = 0; j < ens.size(); ++j) {
      b.col(j) = barrier_drift(spec.constraints, ens.particle(j), sched.tau);
    }
    drift += cov_times(c, Matrix(b.colwise() - b.rowwise().mean()));
  }
  return drift;
}

std::string to_string(FlowVariant v) {
  switch (v) {
    case FlowVariant::kPlainEki: return "plain-eki";
    case FlowVariant::kTikhonovEki: return "tikhonov-eki";
    case FlowVariant::kBarrierMean: return "barrier-mean";
    case FlowVariant::kBarrierPerParticle: return "barrier-per-particle";
  }
  return "unknown";
}

std::string to_string(InflationKind k) {
  switch (k) {
    case InflationKind::kOff: return "off";
    case InflationKind::kConstant: return "constant";
    case InflationKind::kLogIncreasing: return "log-increasing";
  }
  return "unknown";
}

std::string to_string(PenaltyKind k) {
  return k == PenaltyKind::kConstant ? "constant" : "linear";
}

FlowVariant parse_flow_variant(const std::string& s) {
  for (auto v : {FlowVariant::kPlainEki, FlowVariant::kTikhonovEki,
                 FlowVariant::kBarrierMean, FlowVariant::kBarrierPerParticle}) {
    if (to_string(v) == s) return v;
  }
  throw UsageError("unknown flow variant '" + s + "'");
}

InflationKind parse_inflation_kind(const std::string& s) {
  for (auto k : {InflationKind::kOff, InflationKind::kConstant, InflationKind::kLogIncreasing}) {
    if (to_string(k) == s) return k;
  }
  throw UsageError("unknown inflation kind '" + s + "'");
}

PenaltyKind parse_penalty_kind(const std::string& s) {
  if (s == "constant") return PenaltyKind::kConstant;
  if (s == "linear") return PenaltyKind::kLinear;
  throw UsageError("unknown penalty kind '" + s + "'");
}

}  // namespace beki
