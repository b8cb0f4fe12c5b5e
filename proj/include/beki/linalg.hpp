#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace beki {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Symmetric positive definite matrix with a cached spectral factorization.
///
/// All products with the inverse go through the factorization; the inverse
/// is never formed.  The spectral form (rather than Cholesky) keeps solves
/// accurate for the badly conditioned kernel covariances used as priors and
/// gives the extreme eigenvalues for free.
class SpdMatrix {
 public:
  SpdMatrix() = default;
  /// Throws FactorizationError unless `m` is square, symmetric to 1e-10
  /// relative and has a strictly positive spectrum.
  explicit SpdMatrix(Matrix m);

  static SpdMatrix identity(Index n);
  static SpdMatrix scaled_identity(Index n, double value);

  const Matrix& matrix() const { return m_; }
  Index size() const { return m_.rows(); }

  Vector solve(const Vector& b) const;
  Matrix solve(const Matrix& b) const;
  /// <x, M^{-1} x>
  double inv_quad(const Vector& x) const;

  double min_eigenvalue() const { return eigvals_(0); }
  double max_eigenvalue() const { return eigvals_(eigvals_.size() - 1); }
  const Vector& eigenvalues() const { return eigvals_; }
  const Matrix& eigenvectors() const { return eigvecs_; }

 private:
  Matrix m_;
  Matrix eigvecs_;
  Vector eigvals_;
};

/// Mean of the columns, accumulated as offsets from the first column so that
/// identical columns give their common value exactly.
inline Vector column_mean(const Matrix& m) {
  const Vector first = m.col(0);
  return first + (m.colwise() - first).rowwise().mean();
}

/// Seeded generator used for every random draw in the library.
using Rng = std::mt19937_64;

/// Matrix of independent standard normal draws.
Matrix standard_normal(Index rows, Index cols, Rng& rng);

}  // namespace beki
