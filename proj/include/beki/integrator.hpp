#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "beki/constraints.hpp"
#include "beki/dynamics.hpp"
#include "beki/ensemble.hpp"

namespace beki {

struct IntegratorConfig {
  double rtol = 1e-6;
  double atol = 1e-9;
  double h0 = 1e-4;
  double h_min = 1e-14;
  double h_max = std::numeric_limits<double>::infinity();
  double t_final = 1.0;
  double safety = 0.9;
  int checkpoints = 200;
  /// Consecutive feasibility halvings tolerated before a stiffness abort.
  int max_feasibility_halvings = 40;

  /// Throws InvalidInput unless 0 < h_min <= h0 <= h_max, tolerances and T
  /// are positive and safety lies in (0, 1).
  void validate() const;
};

enum class StepReason { kErrorControl, kFeasibilityReject, kMinStep };

struct StepOutcome {
  bool accepted = false;
  double t_new = 0.0;
  double h_new = 0.0;
  StepReason reason = StepReason::kErrorControl;
};

struct IntegrationStats {
  std::int64_t accepted = 0;
  std::int64_t rejected_error = 0;
  std::int64_t rejected_feasibility = 0;
  std::int64_t rhs_evals = 0;
};

using OdeRhs = std::function<Vector(double t, const Vector& x)>;
/// Returns false when a candidate state must be rejected on feasibility
/// grounds (the step is halved and retried).
using StateGuard = std::function<bool(double t, const Vector& x)>;

/// Dormand–Prince 4(5) with FSAL and PI step-size control.
///
/// The RHS may throw FeasibilityMarginError for states off the admissible
/// set; this is treated like a guard rejection.
class DormandPrince45 {
 public:
  DormandPrince45(OdeRhs rhs, const IntegratorConfig& cfg, StateGuard guard = nullptr);

  /// Starts at (t0, x0); evaluates f(t0, x0).
  void reset(double t0, const Vector& x0);

  /// Attempts one step no longer than `t_limit - t()`.  On success the state
  /// advances.  Throws StiffnessAbort (via `on_stiff`) when h drops below
  /// h_min, DivergenceError on a non-finite RHS at an accepted state.
  StepOutcome try_step(double t_limit);

  /// Integrates to `t_end`, landing on it exactly.
  void advance_to(double t_end);

  double t() const { return t_; }
  double h() const { return h_; }
  const Vector& state() const { return x_; }
  const IntegrationStats& stats() const { return stats_; }

  /// Hook providing (margin, tau) for stiffness-abort reports.
  std::function<std::pair<double, double>(double t, const Vector& x)> abort_info;

 private:
  bool eval(double t, const Vector& x, Vector& out);
  [[noreturn]] void abort_stiff(const char* why) const;

  OdeRhs rhs_;
  IntegratorConfig cfg_;
  StateGuard guard_;
  double t_ = 0.0;
  double h_ = 0.0;
  double err_prev_ = 1e-4;
  int feasibility_halvings_ = 0;
  bool last_rejected_ = false;
  Vector x_;
  Vector f_;
  Vector k_[7];
  IntegrationStats stats_;
};

struct OdeSolution {
  std::vector<double> t;
  std::vector<Vector> x;
  IntegrationStats stats;
};

/// Solves x' = f(t, x) from (t0, x0) and reports the state at each of the
/// strictly increasing `output_times` (all > t0).
OdeSolution solve_ode(const OdeRhs& rhs, double t0, const Vector& x0,
                      const std::vector<double>& output_times, const IntegratorConfig& cfg,
                      const StateGuard& guard = nullptr);

/// t = 0 followed by `count` log-spaced times from 1e-2 to T (linear when
/// T <= 1e-2).
std::vector<double> checkpoint_times(double t_final, int count);

/// Called at t = 0 and at every checkpoint.
using EnsembleObserver =
    std::function<void(double t, const Ensemble& ens, const IntegrationStats& stats)>;

struct IntegrationResult {
  Ensemble final_ensemble;
  std::vector<double> times;
  IntegrationStats stats;
};

/// Integrates the particle system of `spec` over [0, T], state = the J
/// particles stacked column by column.  Barrier variants additionally
/// require feasibility_margin(ū) < -ε_feas after each accepted step.
///
/// Throws InvalidStart when a barrier variant starts from an infeasible
/// mean, StiffnessAbort and DivergenceError as DormandPrince45 does.
IntegrationResult integrate(const Ensemble& ens0, const FlowSpec& spec,
                            const IntegratorConfig& cfg,
                            const EnsembleObserver& observer = nullptr);

/// Clamps each particle into the box, then pulls it toward the box center by
/// the factor `shrink` in [0, 1).
Ensemble pre_project(const Ensemble& ens, const BoxBounds& bounds, double shrink);

}  // namespace beki
