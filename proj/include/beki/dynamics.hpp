#pragma once

#include <string>

#include "beki/constraints.hpp"
#include "beki/ensemble.hpp"
#include "beki/potentials.hpp"

namespace beki {

enum class InflationKind { kOff, kConstant, kLogIncreasing };

/// Covariance inflation ρ_t on the data term and β on the regularization
/// term of the spread dynamics.
struct InflationSchedule {
  InflationKind kind = InflationKind::kOff;
  double rho0 = 0.0;
  double beta = 0.0;
};

enum class PenaltyKind { kConstant, kLinear };

/// Barrier weight τ_t: constant τ0, or τ_t = t + 1.
struct PenaltySchedule {
  PenaltyKind kind = PenaltyKind::kConstant;
  double tau0 = 1.0;
};

enum class FlowVariant { kPlainEki, kTikhonovEki, kBarrierMean, kBarrierPerParticle };

struct FlowSpec {
  FlowVariant variant = FlowVariant::kBarrierMean;
  ForwardModel model;
  double lambda = 0.0;
  ConstraintSet constraints;
  InflationSchedule inflation;
  PenaltySchedule penalty;

  bool uses_barrier() const {
    return variant == FlowVariant::kBarrierMean ||
           variant == FlowVariant::kBarrierPerParticle;
  }
  /// Throws InvalidInput for inconsistent specs (e.g. barrier without
  /// constraints, λ < 0, ρ outside [0, 1)).
  void validate() const;
};

struct ScheduleValues {
  double rho = 0.0;
  double beta = 0.0;
  double tau = 1.0;
};

ScheduleValues eval_schedules(const InflationSchedule& inflation,
                              const PenaltySchedule& penalty, double t);

/// du_j/dt = -Ĉ^{uG} Γ^{-1}(G(u_j) - y); returns a d x J matrix.
Matrix rhs_plain_eki(const Ensemble& ens, const ForwardModel& model);

/// Particle drifts of the selected flow variant at time t (d x J).
///
/// For the regularized variants this is p_{ρ,β}(u_j) with an explicit λ on
/// the C0 terms; barrier-mean adds Ĉ (1/τ_t) Σ ∇h_i(ū)/h_i(ū) to every
/// particle and barrier-per-particle evaluates the barrier at u_j instead.
/// Throws FeasibilityMarginError when the barrier point is within the
/// strict-feasibility margin.
Matrix rhs_constrained(const Ensemble& ens, const FlowSpec& spec, double t);

/// Same as rhs_constrained with precomputed forward outputs (K x J).
Matrix rhs_constrained(const Ensemble& ens, const Matrix& g_values, const FlowSpec& spec,
                       double t);

/// Drift of the centered particles e_j = u_j - ū, from the closed-form spread
/// dynamics: -(1-ρ)Ĉ^{uG}Γ^{-1}(G_j - Ḡ) - (1-β)λ Ĉ C0^{-1} e_j (plus the
/// barrier differences for the per-particle variant).
Matrix rhs_centered(const Ensemble& ens, const FlowSpec& spec, double t);

std::string to_string(FlowVariant v);
std::string to_string(InflationKind k);
std::string to_string(PenaltyKind k);
FlowVariant parse_flow_variant(const std::string& s);
InflationKind parse_inflation_kind(const std::string& s);
PenaltyKind parse_penalty_kind(const std::string& s);

}  // namespace beki
