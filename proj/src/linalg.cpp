#include "beki/linalg.hpp"

#include <cmath>
#include <string>

#include "beki/errors.hpp"

namespace beki {

SpdMatrix::SpdMatrix(Matrix m) : m_(std::move(m)) {
  if (m_.rows() != m_.cols() || m_.rows() == 0) {
    throw FactorizationError("SPD matrix must be square and non-empty");
  }
  if (!m_.allFinite()) {
    throw FactorizationError("SPD matrix has non-finite entries");
  }
  const double scale = m_.cwiseAbs().maxCoeff();
  if ((m_ - m_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw FactorizationError("matrix is not symmetric");
  }
  m_ = 0.5 * (m_ + m_.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m_);
  if (eig.info() != Eigen::Success) {
    throw FactorizationError("eigendecomposition failed");
  }
  eigvals_ = eig.eigenvalues();
  eigvecs_ = eig.eigenvectors();
  if (!(eigvals_(0) > 0.0)) {
    throw FactorizationError("matrix is not positive definite (min eigenvalue " +
                             std::to_string(eigvals_(0)) + ")");
  }
}

SpdMatrix SpdMatrix::identity(Index n) { return scaled_identity(n, 1.0); }

SpdMatrix SpdMatrix::scaled_identity(Index n, double value) {
  return SpdMatrix(Matrix::Identity(n, n) * value);
}

Vector SpdMatrix::solve(const Vector& b) const {
  return eigvecs_ * (eigvecs_.transpose() * b).cwiseQuotient(eigvals_);
}

Matrix SpdMatrix::solve(const Matrix& b) const {
  Matrix coeffs = eigvecs_.transpose() * b;
  coeffs.array().colwise() /= eigvals_.array();
  return eigvecs_ * coeffs;
}

double SpdMatrix::inv_quad(const Vector& x) const {
  const Vector c = eigvecs_.transpose() * x;
  return c.cwiseAbs2().cwiseQuotient(eigvals_).sum();
}

Matrix standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(rows, cols);
  // Column-major fill so that a sample's coefficients are drawn contiguously.
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) {
      out(i, j) = normal(rng);
    }
  }
  return out;
}

}  // namespace beki
