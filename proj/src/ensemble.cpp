#include "beki/ensemble.hpp"

#include <algorithm>

#include "beki/errors.hpp"

namespace beki {

Ensemble::Ensemble(Matrix particles) : particles_(std::move(particles)) {
  if (particles_.cols() < 2) {
    throw InvalidInput("ensemble needs at least two particles");
  }
  if (particles_.rows() < 1) {
    throw InvalidInput("particle dimension must be at least one");
  }
  if (!particles_.allFinite()) {
    throw InvalidInput("ensemble contains non-finite entries");
  }
}

EnsembleStats compute_stats(const Ensemble& ens, const Matrix& g_values) {
  const Index J = ens.size();
  if (g_values.cols() != J) {
    throw InvalidInput("g_values must have one column per particle");
  }
  const double inv_j = 1.0 / static_cast<double>(J);

  EnsembleStats s;
  s.mean = ens.mean();
  s.centered = ens.particles().colwise() - s.mean;
  s.cov = inv_j * (s.centered * s.centered.transpose());
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  s.mean_g = J > 0 && g_values.rows() > 0 ? column_mean(g_values) : Vector::Zero(g_values.rows());
  s.centered_g = g_values.colwise() - s.mean_g;
  s.cross_cov = inv_j * (s.centered * s.centered_g.transpose());
  s.spread = 0.5 * inv_j * s.centered.squaredNorm();
  return s;
}

EnsembleStats compute_stats(const Ensemble& ens) {
  return compute_stats(ens, Matrix(0, ens.size()));
}

Vector AffineSubspace::project_direction(const Vector& v) const {
  return basis * (basis.transpose() * v);
}

Vector AffineSubspace::project_point(const Vector& u) const {
  return offset + project_direction(u - offset);
}

AffineSubspace AffineSubspace::from_ensemble(const Ensemble& ens) {
  const Vector mean = ens.mean();
  const Matrix centered = ens.particles().colwise() - mean;
  Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinU);
  const Vector& sv = svd.singularValues();
  Index rank = 0;
  if (sv.size() > 0 && sv(0) > 0.0) {
    const double cutoff = 1e-12 * sv(0);
    while (rank < sv.size() && sv(rank) > cutoff) ++rank;
  }
  AffineSubspace sub;
  sub.basis = svd.matrixU().leftCols(rank);
  sub.offset = mean - sub.basis * (sub.basis.transpose() * mean);
  return sub;
}

AffineSubspace AffineSubspace::full_space(Index d) {
  return AffineSubspace{Vector::Zero(d), Matrix::Identity(d, d)};
}

double min_eigenvalue_on_span(const EnsembleStats& stats,
                              const AffineSubspace& subspace) {
  if (subspace.rank() == 0) {
    throw DegenerateSpan("ensemble span has rank zero");
  }
  if (subspace.dim() != stats.cov.rows()) {
    throw InvalidInput("subspace and covariance dimensions differ");
  }
  const Matrix projected =
      subspace.basis.transpose() * stats.cov * subspace.basis;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 *
                                            (projected + projected.transpose()),
                                            Eigen::EigenvaluesOnly);
  return std::max(0.0, eig.eigenvalues()(0));
}

double subspace_distance(const Ensemble& ens, const AffineSubspace& subspace) {
  if (subspace.dim() != ens.dim()) {
    throw InvalidInput("subspace and ensemble dimensions differ");
  }
  double worst = 0.0;
  for (Index j = 0; j < ens.size(); ++j) {
    const Vector rel = ens.particle(j) - subspace.offset;
    worst = std::max(worst, (rel - subspace.project_direction(rel)).norm());
  }
  return worst;
}

}  // namespace beki
