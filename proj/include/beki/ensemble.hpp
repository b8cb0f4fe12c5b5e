#pragma once

#include "beki/linalg.hpp"

namespace beki {

/// J particles in R^d, stored column-wise as a d x J matrix.
class Ensemble {
 public:
  /// Throws InvalidInput if J < 2, d < 1 or any entry is non-finite.
  explicit Ensemble(Matrix particles);

  const Matrix& particles() const { return particles_; }
  Index size() const { return particles_.cols(); }
  Index dim() const { return particles_.rows(); }
  auto particle(Index j) const { return particles_.col(j); }
  Vector mean() const { return column_mean(particles_); }

 private:
  Matrix particles_;
};

/// Empirical statistics of an ensemble, all normalized by 1/J.
struct EnsembleStats {
  Vector mean;        ///< ū
  Matrix centered;    ///< d x J, columns e_j = u_j - ū
  Matrix cov;         ///< d x d, (1/J) Σ e_j e_jᵀ
  Matrix cross_cov;   ///< d x K, (1/J) Σ e_j (G_j - Ḡ)ᵀ
  Vector mean_g;      ///< Ḡ, length K
  Matrix centered_g;  ///< K x J, columns G_j - Ḡ
  double spread = 0;  ///< V_e = (1/J) Σ ½‖e_j‖²
};

/// Statistics of `ens` together with forward-model outputs `g_values`
/// (K x J, column j belongs to particle j).  K may be zero.
EnsembleStats compute_stats(const Ensemble& ens, const Matrix& g_values);
EnsembleStats compute_stats(const Ensemble& ens);

/// Affine set offset + span(basis) with an orthonormal basis.
struct AffineSubspace {
  Vector offset;
  Matrix basis;  ///< d x r

  Index rank() const { return basis.cols(); }
  Index dim() const { return offset.size(); }

  /// Orthogonal projection of a direction onto span(basis).
  Vector project_direction(const Vector& v) const;
  /// Closest point of the affine set to `u`.
  Vector project_point(const Vector& u) const;

  /// Subspace spanned by the centered particles, anchored at the
  /// component of the mean orthogonal to that span.  Singular values below
  /// 1e-12 times the largest are treated as zero.
  static AffineSubspace from_ensemble(const Ensemble& ens);
  /// The whole space R^d (offset zero, identity basis).
  static AffineSubspace full_space(Index d);
};

/// min over unit z in span(basis) of <z, cov z>.  Throws DegenerateSpan when
/// the subspace has rank zero.
double min_eigenvalue_on_span(const EnsembleStats& stats,
                              const AffineSubspace& subspace);

/// max_j ‖(I - P)(u_j - offset)‖.
double subspace_distance(const Ensemble& ens, const AffineSubspace& subspace);

}  // namespace beki
