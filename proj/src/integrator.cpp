#include "beki/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "beki/errors.hpp"

namespace beki {

void IntegratorConfig::validate() const {
  if (!(rtol > 0.0) || !(atol > 0.0)) throw InvalidInput("rtol and atol must be positive");
  if (!(h_min > 0.0 && h_min <= h0 && h0 <= h_max)) {
    throw InvalidInput("step sizes must satisfy 0 < h_min <= h0 <= h_max");
  }
  if (!(t_final > 0.0) || !std::isfinite(t_final)) throw InvalidInput("T must be positive");
  if (!(safety > 0.0 && safety < 1.0)) throw InvalidInput("safety must lie in (0, 1)");
  if (checkpoints < 1) throw InvalidInput("need at least one checkpoint");
  if (max_feasibility_halvings < 1) throw InvalidInput("max_feasibility_halvings must be >= 1");
}

namespace {

// Dormand–Prince 5(4) tableau.
constexpr double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
// 5th-order weights are row 6 of kA; E = b5 - b4.
constexpr double kE[7] = {71.0 / 57600,      0.0, -71.0 / 16695, 71.0 / 1920,
                          -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

// PI controller exponents for a 5th-order pair.
constexpr double kBeta = 0.04;
constexpr double kAlpha = 0.2 - 0.75 * kBeta;
constexpr double kMaxGrowth = 5.0;
constexpr double kMaxShrink = 0.1;

}  // namespace

DormandPrince45::DormandPrince45(OdeRhs rhs, const IntegratorConfig& cfg, StateGuard guard)
    : rhs_(std::move(rhs)), cfg_(cfg), guard_(std::move(guard)) {
  cfg_.validate();
  if (!rhs_) throw InvalidInput("integrator needs a right-hand side");
}

bool DormandPrince45::eval(double t, const Vector& x, Vector& out) {
  ++stats_.rhs_evals;
  try {
    out = rhs_(t, x);
  } catch (const FeasibilityMarginError&) {
    return false;
  }
  return true;
}

void DormandPrince45::abort_stiff(const char* why) const {
  double margin = std::numeric_limits<double>::quiet_NaN();
  double tau = std::numeric_limits<double>::quiet_NaN();
  if (abort_info) std::tie(margin, tau) = abort_info(t_, x_);
  std::ostringstream os;
  os << why << " at t = " << t_ << " (h = " << h_ << ")";
  throw StiffnessAbort(os.str(), t_, margin, tau);
}

void DormandPrince45::reset(double t0, const Vector& x0) {
  t_ = t0;
  x_ = x0;
  h_ = cfg_.h0;
  err_prev_ = 1e-4;
  feasibility_halvings_ = 0;
  last_rejected_ = false;
  if (!x_.allFinite()) throw DivergenceError("initial state is not finite", t0);
  if (!eval(t_, x_, f_)) {
    throw InvalidStart("right-hand side rejects the initial state");
  }
  if (!f_.allFinite()) throw DivergenceError("right-hand side is not finite", t0);
}

StepOutcome DormandPrince45::try_step(double t_limit) {
  const double remaining = t_limit - t_;
  const bool clamped = h_ >= remaining;
  const double h = clamped ? remaining : h_;

  // Feasibility failure: halve independently of the error controller.
  auto feasibility_reject = [&]() {
    ++stats_.rejected_feasibility;
    ++feasibility_halvings_;
    h_ = 0.5 * h;
    last_rejected_ = true;
    if (feasibility_halvings_ > cfg_.max_feasibility_halvings) {
      abort_stiff("feasibility guard exhausted its step halvings");
    }
    if (h_ < cfg_.h_min) abort_stiff("step size fell below h_min after feasibility rejects");
    return StepOutcome{false, t_, h_, StepReason::kFeasibilityReject};
  };

  k_[0] = f_;
  Vector stage(x_.size());
  for (int s = 1; s < 7; ++s) {
    stage = x_;
    for (int q = 0; q < s; ++q) {
      if (kA[s][q] != 0.0) stage.noalias() += (h * kA[s][q]) * k_[q];
    }
    if (s == 6) break;  // row 6 is the new state; its derivative is k_[6]
    if (!eval(t_ + kC[s] * h, stage, k_[s])) return feasibility_reject();
  }
  const Vector& x_new = stage;
  const double t_new = clamped ? t_limit : t_ + h;
  if (x_new.allFinite() && guard_ && !guard_(t_new, x_new)) return feasibility_reject();
  Vector f_new;
  bool f_ok = x_new.allFinite() && eval(t_new, x_new, f_new);
  if (x_new.allFinite() && !f_ok) return feasibility_reject();

  Vector err_vec = h * kE[0] * k_[0];
  for (int s = 2; s < 6; ++s) err_vec.noalias() += (h * kE[s]) * k_[s];
  if (f_ok) err_vec.noalias() += (h * kE[6]) * f_new;
  double err = std::numeric_limits<double>::infinity();
  if (f_ok && f_new.allFinite()) {
    const Vector scale = (cfg_.atol + cfg_.rtol * x_.cwiseAbs().cwiseMax(x_new.cwiseAbs()).array())
                             .matrix();
    err = std::sqrt((err_vec.array() / scale.array()).square().mean());
  }

  if (!std::isfinite(err) || err > 1.0) {
    ++stats_.rejected_error;
    const double factor =
        std::isfinite(err) ? std::max(kMaxShrink, cfg_.safety * std::pow(err, -kAlpha)) : kMaxShrink;
    h_ = h * factor;
    last_rejected_ = true;
    if (h_ < cfg_.h_min) {
      if (!std::isfinite(err)) throw DivergenceError("state became non-finite", t_);
      abort_stiff("step size fell below h_min");
    }
    return StepOutcome{false, t_, h_, StepReason::kErrorControl};
  }

  // Accept.
  ++stats_.accepted;
  feasibility_halvings_ = 0;
  double factor = err == 0.0 ? kMaxGrowth
                             : cfg_.safety * std::pow(err, -kAlpha) * std::pow(err_prev_, kBeta);
  factor = std::clamp(factor, kMaxShrink, kMaxGrowth);
  if (last_rejected_) factor = std::min(factor, 1.0);
  err_prev_ = std::max(err, 1e-4);
  last_rejected_ = false;
  // A step shortened to land on t_limit keeps the controller's proposal.
  const double proposal = std::min(cfg_.h_max, clamped ? std::max(h_, h * factor) : h * factor);
  t_ = t_new;
  x_ = x_new;
  f_ = std::move(f_new);
  h_ = std::max(proposal, cfg_.h_min);
  return StepOutcome{true, t_, h_, StepReason::kErrorControl};
}

void DormandPrince45::advance_to(double t_end) {
  if (t_end < t_) throw InvalidInput("cannot integrate backwards");
  while (t_ < t_end) try_step(t_end);
}

OdeSolution solve_ode(const OdeRhs& rhs, double t0, const Vector& x0,
                      const std::vector<double>& output_times, const IntegratorConfig& cfg,
                      const StateGuard& guard) {
  DormandPrince45 dp(rhs, cfg, guard);
  dp.reset(t0, x0);
  OdeSolution sol;
  double prev = t0;
  for (double t : output_times) {
    if (!(t > prev)) throw InvalidInput("output times must be strictly increasing and > t0");
    dp.advance_to(t);
    sol.t.push_back(dp.t());
    sol.x.push_back(dp.state());
    prev = t;
  }
  sol.stats = dp.stats();
  return sol;
}

std::vector<double> checkpoint_times(double t_final, int count) {
  if (!(t_final > 0.0) || count < 1) throw InvalidInput("invalid checkpoint request");
  std::vector<double> times{0.0};
  constexpr double kFirst = 1e-2;
  if (count == 1) {
    times.push_back(t_final);
    return times;
  }
  if (t_final <= kFirst) {
    for (int i = 1; i <= count; ++i) times.push_back(t_final * i / count);
    return times;
  }
  const double l0 = std::log10(kFirst);
  const double l1 = std::log10(t_final);
  for (int i = 0; i < count; ++i) {
    const double t = i == count - 1 ? t_final : std::pow(10.0, l0 + (l1 - l0) * i / (count - 1));
    if (t > times.back()) times.push_back(t);
  }
  return times;
}

IntegrationResult integrate(const Ensemble& ens0, const FlowSpec& spec,
                            const IntegratorConfig& cfg, const EnsembleObserver& observer) {
  spec.validate();
  cfg.validate();
  const Index d = ens0.dim();
  const Index j_count = ens0.size();
  if (d != spec.model.dim()) throw InvalidInput("ensemble dimension does not match model");

  auto as_ensemble = [&](const Vector& x) {
    return Ensemble(Eigen::Map<const Matrix>(x.data(), d, j_count));
  };
  auto mean_of = [&](const Vector& x) -> Vector {
    return column_mean(Eigen::Map<const Matrix>(x.data(), d, j_count));
  };

  if (spec.uses_barrier()) {
    const Vector m0 = ens0.mean();
    if (!spec.constraints.strictly_feasible(m0)) {
      throw InvalidStart("initial ensemble mean is not strictly feasible");
    }
    if (spec.variant == FlowVariant::kBarrierPerParticle) {
      for (Index j = 0; j < j_count; ++j) {
        if (!spec.constraints.strictly_feasible(ens0.particle(j))) {
          throw InvalidStart("per-particle barrier needs every particle strictly feasible");
        }
      }
    }
  }

  OdeRhs rhs = [&](double t, const Vector& x) -> Vector {
    const Matrix drift = rhs_constrained(as_ensemble(x), spec, t);
    return Eigen::Map<const Vector>(drift.data(), drift.size());
  };
  StateGuard guard = nullptr;
  if (spec.uses_barrier()) {
    guard = [&](double, const Vector& x) {
      if (!spec.constraints.strictly_feasible(mean_of(x))) return false;
      if (spec.variant == FlowVariant::kBarrierPerParticle) {
        const Eigen::Map<const Matrix> p(x.data(), d, j_count);
        for (Index j = 0; j < j_count; ++j) {
          if (!spec.constraints.strictly_feasible(p.col(j))) return false;
        }
      }
      return true;
    };
  }

  DormandPrince45 dp(rhs, cfg, guard);
  dp.abort_info = [&](double t, const Vector& x) {
    const ScheduleValues s = eval_schedules(spec.inflation, spec.penalty, t);
    return std::make_pair(feasibility_margin(spec.constraints, mean_of(x)), s.tau);
  };
  const Vector x0 = Eigen::Map<const Vector>(ens0.particles().data(), d * j_count);
  dp.reset(0.0, x0);

  const std::vector<double> times = checkpoint_times(cfg.t_final, cfg.checkpoints);
  if (observer) observer(0.0, ens0, dp.stats());
  for (std::size_t i = 1; i < times.size(); ++i) {
    dp.advance_to(times[i]);
    if (!dp.state().allFinite()) throw DivergenceError("state became non-finite", dp.t());
    if (observer) observer(dp.t(), as_ensemble(dp.state()), dp.stats());
  }
  return IntegrationResult{as_ensemble(dp.state()), times, dp.stats()};
}

Ensemble pre_project(const Ensemble& ens, const BoxBounds& bounds, double shrink) {
  bounds.validate();
  if (!(shrink >= 0.0 && shrink < 1.0)) throw InvalidInput("shrink must lie in [0, 1)");
  Matrix p = ens.particles();
  for (Index j = 0; j < p.cols(); ++j) {
    Vector u = project_box(bounds, p.col(j));
    for (std::size_t k = 0; k < bounds.indices.size(); ++k) {
      const Index i = bounds.indices[k];
      const double center = 0.5 * (bounds.lower(k) + bounds.upper(k));
      u(i) += shrink * (center - u(i));
    }
    p.col(j) = u;
  }
  return Ensemble(std::move(p));
}

}  // namespace beki
