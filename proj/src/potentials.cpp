#include "beki/potentials.hpp"

#include <cmath>

#include "beki/errors.hpp"

namespace beki {

Matrix ForwardMap::jacobian(const Vector&) const {
  throw UnsupportedOperation("forward map provides no Jacobian");
}

Vector ForwardMap::jacobian_transpose_apply(const Vector& u, const Vector& w) const {
  return jacobian(u).transpose() * w;
}

Matrix ForwardMap::apply_columns(const Matrix& particles) const {
  Matrix out(output_dim(), particles.cols());
  for (Index j = 0; j < particles.cols(); ++j) {
    out.col(j) = apply(particles.col(j));
  }
  return out;
}

PseudolinearMap::PseudolinearMap(Matrix a, double eps) : a_(std::move(a)), eps_(eps) {
  if (a_.rows() != a_.cols()) throw InvalidInput("pseudolinear map needs square A");
  if (eps_ < 0.0) throw InvalidInput("pseudolinear eps must be nonnegative");
}

Vector PseudolinearMap::apply(const Vector& u) const {
  return a_ * u + eps_ * u.array().sin().matrix();
}

Matrix PseudolinearMap::jacobian(const Vector& u) const {
  Matrix jac = a_;
  jac.diagonal() += eps_ * u.array().cos().matrix();
  return jac;
}

Vector PseudolinearMap::jacobian_transpose_apply(const Vector& u, const Vector& w) const {
  return a_.transpose() * w + eps_ * (u.array().cos() * w.array()).matrix();
}

FunctionMap::FunctionMap(Index d, Index k, ApplyFn apply, JacobianFn jacobian)
    : d_(d), k_(k), apply_(std::move(apply)), jacobian_(std::move(jacobian)) {
  if (!apply_) throw InvalidInput("function map needs an apply callable");
}

Matrix FunctionMap::jacobian(const Vector& u) const {
  if (!jacobian_) throw UnsupportedOperation("forward map provides no Jacobian");
  return jacobian_(u);
}

void ForwardModel::validate() const {
  if (!map || !noise_cov || !prior_cov) {
    throw InvalidInput("forward model is missing its map or covariances");
  }
  if (y.size() != map->output_dim() || noise_cov->size() != map->output_dim()) {
    throw InvalidInput("data / noise covariance size does not match map output");
  }
  if (prior_cov->size() != map->input_dim()) {
    throw InvalidInput("prior covariance size does not match map input");
  }
}

namespace {

void check_dim(const ForwardModel& model, const Vector& u) {
  if (u.size() != model.dim()) throw InvalidInput("parameter dimension mismatch");
}

}  // namespace

double phi_misfit(const ForwardModel& model, const Vector& u) {
  check_dim(model, u);
  return 0.5 * model.noise_cov->inv_quad(model.map->apply(u) - model.y);
}

double phi_reg(const RegularizedPotential& pot, const Vector& u) {
  return phi_misfit(pot.model, u) + 0.5 * pot.lambda * pot.model.prior_cov->inv_quad(u);
}

Vector grad_phi_misfit(const ForwardModel& model, const Vector& u) {
  check_dim(model, u);
  if (!model.map->has_jacobian()) {
    throw UnsupportedOperation("gradient needs the forward-model Jacobian");
  }
  const Vector weighted = model.noise_cov->solve(Vector(model.map->apply(u) - model.y));
  return model.map->jacobian_transpose_apply(u, weighted);
}

Vector grad_phi_reg(const RegularizedPotential& pot, const Vector& u) {
  return grad_phi_misfit(pot.model, u) + pot.lambda * pot.model.prior_cov->solve(u);
}

double phi_barrier(const BarrierPotential& bp, const Vector& u) {
  const double barrier = barrier_value(bp.constraints, u, bp.tau);
  if (barrier == kInfiniteBarrier) return kInfiniteBarrier;
  return phi_reg(bp.base, u) + barrier;
}

Vector grad_phi_barrier(const BarrierPotential& bp, const Vector& u) {
  const Vector drift = barrier_drift(bp.constraints, u, bp.tau);
  return grad_phi_reg(bp.base, u) - drift;
}

Matrix pseudolinear_hessian(const Matrix& a, double eps, double lambda,
                            const Vector& y, const Vector& x) {
  Matrix jac = a;
  jac.diagonal() += eps * x.array().cos().matrix();
  const Vector residual = a * x + eps * x.array().sin().matrix() - y;
  Matrix hess = jac.transpose() * jac;
  hess.diagonal() -= eps * (x.array().sin() * residual.array()).matrix();
  hess.diagonal().array() += lambda;
  return 0.5 * (hess + hess.transpose());
}

StrongConvexityReport check_strong_convexity_pseudolinear(const Matrix& a, double eps,
                                                          double lambda, const Vector& y,
                                                          double radius_b, int samples,
                                                          std::uint64_t seed) {
  if (a.rows() != a.cols() || y.size() != a.rows()) {
    throw InvalidInput("strong-convexity check needs square A and matching y");
  }
  StrongConvexityReport report;
  report.a_max = a.cwiseAbs().maxCoeff();
  report.y_max = y.size() > 0 ? y.cwiseAbs().maxCoeff() : 0.0;
  report.threshold = ((4.0 + radius_b) * report.a_max + report.y_max) * eps + eps * eps;
  report.satisfied = lambda > report.threshold;

  // Uniform points in the ball: Gaussian direction, radius B * U^{1/n}.
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto n = static_cast<double>(a.rows());
  double min_eig = std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    Vector dir = standard_normal(a.rows(), 1, rng);
    const double norm = dir.norm();
    if (norm > 0.0) dir /= norm;
    const Vector x = dir * (radius_b * std::pow(unif(rng), 1.0 / n));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(pseudolinear_hessian(a, eps, lambda, y, x),
                                              Eigen::EigenvaluesOnly);
    min_eig = std::min(min_eig, eig.eigenvalues()(0));
  }
  report.sampled_min_hessian_eig = min_eig;
  return report;
}

}  // namespace beki
