#pragma once

#include <optional>
#include <vector>

#include "beki/constraints.hpp"
#include "beki/ensemble.hpp"
#include "beki/errors.hpp"
#include "beki/potentials.hpp"

namespace beki {

struct BarrierSolveOptions {
  double tol_grad = 1e-8;
  long max_iter = 100000;
  double armijo_c1 = 1e-4;
};

struct BarrierSolveResult {
  Vector minimizer;
  double objective = 0.0;  ///< Φ^b at the minimizer
  double grad_norm = 0.0;  ///< (projected) gradient norm
  long iterations = 0;
  bool converged = false;
};

/// Minimizes Φ^b by gradient descent with Armijo backtracking.
///
/// The first trial step of each line search is the Barzilai–Borwein step
/// from the previous iterate pair.  Trial points outside the strict interior
/// are rejected by halving.  With a subspace, gradients are projected onto
/// span(basis) so iterates stay on offset + span(basis).  Hitting the
/// iteration cap returns converged = false.  Throws InvalidStart when x0 is
/// not strictly feasible or not on the subspace.
BarrierSolveResult solve_barrier(const BarrierPotential& bp, const Vector& x0,
                                 const std::optional<AffineSubspace>& subspace = std::nullopt,
                                 const BarrierSolveOptions& options = {});

struct KKTReport {
  Vector point;
  Vector multipliers;
  double stationarity_norm = 0.0;   ///< ‖∇Φ^reg + Σ λ_j ∇h_j‖ (projected with a subspace)
  double complementarity = 0.0;     ///< max_j |λ_j h_j|
  double primal_feasibility = 0.0;  ///< max_j h_j, -inf without constraints
  bool multipliers_nonnegative = true;
};

/// Evaluates the KKT residuals at (u, multipliers).  With a subspace the
/// stationarity residual is measured on span(basis).
KKTReport kkt_residual(const RegularizedPotential& pot, const ConstraintSet& cs, const Vector& u,
                       const Vector& multipliers,
                       const std::optional<AffineSubspace>& subspace = std::nullopt);

struct LadderStage {
  double tau = 0.0;
  BarrierSolveResult result;
  double phi_reg = 0.0;  ///< Φ^reg(u*^τ)
};

struct ConstrainedSolveResult {
  KKTReport kkt;
  std::vector<LadderStage> stages;

  /// Stage solved at exactly `tau`; throws InvalidInput when absent.
  const LadderStage& stage(double tau) const;
};

/// Raised when a ladder stage fails to converge; carries the stages solved
/// so far.
class LadderFailure : public SolverFailure {
 public:
  LadderFailure(const std::string& what, std::vector<LadderStage> completed)
      : SolverFailure(what), completed_(std::move(completed)) {}
  const std::vector<LadderStage>& completed() const { return completed_; }

 private:
  std::vector<LadderStage> completed_;
};

std::vector<double> default_tau_ladder();  ///< 1e0, 1e1, ..., 1e6

/// Barrier continuation along the increasing `tau_ladder`, each stage warm
/// started from the previous minimizer.  Multipliers at the last stage are
/// recovered as λ_j = -1/(τ h_j(u)).
ConstrainedSolveResult solve_constrained(
    const RegularizedPotential& pot, const ConstraintSet& cs, const Vector& x0,
    const std::vector<double>& tau_ladder = default_tau_ladder(),
    const std::optional<AffineSubspace>& subspace = std::nullopt,
    const BarrierSolveOptions& options = {});

}  // namespace beki
