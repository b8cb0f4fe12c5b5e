#include "beki/reference_solver.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <algorithm>

namespace beki {

namespace {

constexpr double kRoundoff = 64.0 * std::numeric_limits<double>::epsilon();

Vector project(const std::optional<AffineSubspace>& sub, const Vector& g) {
  return sub ? sub->project_direction(g) : g;
}

}  // namespace

BarrierSolveResult solve_barrier(const BarrierPotential& bp, const Vector& x0,
                                 const std::optional<AffineSubspace>& subspace,
                                 const BarrierSolveOptions& options) {
  bp.base.model.validate();
  if (x0.size() != bp.base.model.dim()) throw InvalidInput("start point has the wrong size");
  if (!(bp.tau > 0.0)) throw InvalidInput("barrier weight tau must be positive");
  if (!bp.constraints.strictly_feasible(x0)) {
    throw InvalidStart("barrier solve needs a strictly feasible start");
  }
  if (subspace) {
    if (subspace->dim() != x0.size()) throw InvalidInput("subspace dimension mismatch");
    const double off = (subspace->project_point(x0) - x0).norm();
    if (off > 1e-8 * (1.0 + x0.norm())) throw InvalidStart("start point is off the subspace");
  }

  BarrierSolveResult res;
  Vector x = x0;
  double f = phi_barrier(bp, x);
  Vector g = project(subspace, grad_phi_barrier(bp, x));
  double gn = g.norm();
  Vector x_prev;
  Vector g_prev;
  double step = gn > 0.0 ? std::min(1.0, 1.0 / gn) : 1.0;

  for (res.iterations = 0; res.iterations < options.max_iter; ++res.iterations) {
    if (gn <= options.tol_grad) break;
    if (res.iterations > 0) {
      const Vector s = x - x_prev;
      const Vector y = g - g_prev;
      const double sy = s.dot(y);
      step = sy > 0.0 ? s.squaredNorm() / sy : 2.0 * step;
    }
    // Backtracking: strict interior first, then sufficient decrease.
    bool accepted = false;
    Vector x_new;
    Vector g_new;
    double f_new = 0.0;
    while (step > 0.0 && std::isfinite(step)) {
      x_new = x - step * g;
      if (bp.constraints.strictly_feasible(x_new)) {
        f_new = phi_barrier(bp, x_new);
        if (f_new <= f - options.armijo_c1 * step * gn * gn) {
          accepted = true;
        } else if (std::abs(f_new - f) <= kRoundoff * (1.0 + std::abs(f))) {
          // Objective differences are at round-off level: accept when the
          // slope along -g is still negative at the trial point.
          g_new = project(subspace, grad_phi_barrier(bp, x_new));
          accepted = g_new.dot(g) > 0.0;
        }
        if (accepted) break;
      }
      step *= 0.5;
      if (step * gn <= std::numeric_limits<double>::min()) break;
    }
    if (!accepted) break;  // line search stalled
    if (g_new.size() == 0) g_new = project(subspace, grad_phi_barrier(bp, x_new));
    x_prev = std::move(x);
    g_prev = std::move(g);
    x = std::move(x_new);
    g = std::move(g_new);
    f = f_new;
    gn = g.norm();
  }
  res.minimizer = x;
  res.objective = f;
  res.grad_norm = gn;
  res.converged = gn <= options.tol_grad;
  return res;
}

KKTReport kkt_residual(const RegularizedPotential& pot, const ConstraintSet& cs, const Vector& u,
                       const Vector& multipliers,
                       const std::optional<AffineSubspace>& subspace) {
  if (multipliers.size() != cs.size()) throw InvalidInput("need one multiplier per constraint");
  KKTReport rep;
  rep.point = u;
  rep.multipliers = multipliers;
  Vector stat = grad_phi_reg(pot, u);
  rep.complementarity = 0.0;
  for (Index j = 0; j < cs.size(); ++j) {
    cs[j].add_gradient(u, multipliers(j), stat);
    rep.complementarity = std::max(rep.complementarity, std::abs(multipliers(j) * cs[j].value(u)));
    if (multipliers(j) < 0.0) rep.multipliers_nonnegative = false;
  }
  rep.stationarity_norm = project(subspace, stat).norm();
  rep.primal_feasibility = feasibility_margin(cs, u);
  return rep;
}

const LadderStage& ConstrainedSolveResult::stage(double tau) const {
  for (const auto& s : stages) {
    if (s.tau == tau) return s;
  }
  throw InvalidInput("no ladder stage at the requested tau");
}

std::vector<double> default_tau_ladder() { return {1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6}; }

ConstrainedSolveResult solve_constrained(const RegularizedPotential& pot,
                                         const ConstraintSet& cs, const Vector& x0,
                                         const std::vector<double>& tau_ladder,
                                         const std::optional<AffineSubspace>& subspace,
                                         const BarrierSolveOptions& options) {
  if (tau_ladder.empty()) throw InvalidInput("tau ladder is empty");
  for (std::size_t i = 0; i < tau_ladder.size(); ++i) {
    if (!(tau_ladder[i] > 0.0) || (i > 0 && !(tau_ladder[i] > tau_ladder[i - 1]))) {
      throw InvalidInput("tau ladder must be positive and strictly increasing");
    }
  }
  ConstrainedSolveResult out;
  Vector x = x0;
  for (double tau : tau_ladder) {
    const BarrierPotential bp{pot, cs, tau};
    BarrierSolveResult r = solve_barrier(bp, x, subspace, options);
    if (!r.converged) {
      std::ostringstream os;
      os << "barrier stage tau = " << tau << " stopped at gradient norm " << r.grad_norm
         << " after " << r.iterations << " iterations";
      throw LadderFailure(os.str(), out.stages);
    }
    x = r.minimizer;
    out.stages.push_back(LadderStage{tau, r, phi_reg(pot, r.minimizer)});
  }
  const double tau_final = tau_ladder.back();
  Vector mult(cs.size());
  for (Index j = 0; j < cs.size(); ++j) mult(j) = -1.0 / (tau_final * cs[j].value(x));
  out.kkt = kkt_residual(pot, cs, x, mult, subspace);
  return out;
}

}  // namespace beki
