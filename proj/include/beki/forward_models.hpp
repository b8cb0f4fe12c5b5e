#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "beki/constraints.hpp"
#include "beki/potentials.hpp"

namespace beki {

/// One implicit-Euler step of u_t = u_xx + f on (0, 1) with homogeneous
/// Dirichlet data, started from zero and observed at every interior node.
struct Heat1DModel {
  Index n_interior = 0;
  double dx = 0.0;
  double dt = 0.0;
  double eps = 0.0;
  Matrix a;     ///< dt (I - dt D2)^{-1}, symmetric positive definite
  Vector grid;  ///< interior nodes x_i = i dx

  std::shared_ptr<const PseudolinearMap> map() const;
};

/// Throws InvalidInput unless 1/dx is an integer >= 2 and dt > 0.
Heat1DModel build_heat1d(double dx = 0.01, double dt = 0.05, double eps = 0.01);

/// Karhunen–Loève expansion of the Gaussian kernel σ² exp(-|s - t|²/L) on
/// a grid.  Eigenvectors are orthonormal in the Euclidean inner product.
struct KLPrior1D {
  double sigma2 = 10.0;
  double length_scale = 0.1;
  Index r = 12;
  Vector grid;
  Matrix kernel;       ///< full kernel matrix on the grid
  Vector eigenvalues;  ///< top r, nonincreasing, clamped at 0
  Matrix eigenvectors; ///< d x r
  Index clamped_negative = 0;  ///< eigenvalues < 0 from round-off set to 0

  /// Throws InvalidInput unless 1 <= r <= grid size and sigma2, L > 0.
  static KLPrior1D build(const Vector& grid, double sigma2, double length_scale, Index r);

  /// Kernel matrix plus nugget * λ_max * I.
  Matrix covariance(double nugget) const;
};

/// Σ_i λ_i^{1/2} e_i ξ_i for each column of `xi` (r x count).
Matrix kl_field_1d(const KLPrior1D& prior, const Matrix& xi);
/// `count` seeded draws, one per column (d x count).
Matrix sample_kl_1d(const KLPrior1D& prior, Index count, std::uint64_t seed);

struct DarcySolution {
  Vector pressure;      ///< all n² nodes (boundary entries are 0)
  Vector observations;  ///< K values
};

/// P1 finite elements for -∇·(exp(u) ∇p) = f on (0,1)² with p = 0 on the
/// boundary.  The n x n nodal grid (node index i + n j at (i, j) / (n - 1))
/// is split into two triangles per cell along the (0,0)-(1,1) diagonal.  The
/// element coefficient is the mean of exp(u) over the three vertices.
class Darcy2DModel final : public ForwardMap {
 public:
  /// Observation points are drawn uniformly from (0.1, 0.9)² with `obs_seed`.
  Darcy2DModel(int n, double f, int k_obs, std::uint64_t obs_seed);
  /// Explicit observation points (k x 2, inside the closed unit square).
  Darcy2DModel(int n, double f, Matrix obs_points);

  Index input_dim() const override { return static_cast<Index>(n_) * n_; }
  Index output_dim() const override { return obs_points_.rows(); }
  Vector apply(const Vector& u) const override;
  bool has_jacobian() const override { return true; }
  /// Built from one adjoint solve per observation.
  Matrix jacobian(const Vector& u) const override;
  /// Adjoint gradient: one forward and one adjoint solve.
  Vector jacobian_transpose_apply(const Vector& u, const Vector& w) const override;

  DarcySolution solve(const Vector& u) const;
  /// P1 interpolant of a nodal field at (x1, x2).
  double interpolate(const Vector& nodal, double x1, double x2) const;

  int n() const { return n_; }
  double source() const { return f_; }
  const Matrix& obs_points() const { return obs_points_; }
  /// Coordinates of all nodes (n² x 2).
  Matrix node_coordinates() const;

 private:
  struct ObsStencil {
    Index node[3];
    double weight[3];
  };
  struct System;
  void build_mesh();
  ObsStencil locate(double x1, double x2) const;
  void assemble_and_solve(const Vector& u, System& sys) const;

  int n_;
  double f_;
  Matrix obs_points_;
  std::vector<std::array<Index, 3>> triangles_;
  std::vector<ObsStencil> stencils_;
  std::vector<Index> free_index_;  ///< node -> unknown index, -1 on the boundary
  Index n_free_ = 0;
  // Unit-coefficient local stiffness for the two triangle orientations.
  Eigen::Matrix3d local_[2];
  double area_ = 0.0;
};

DarcySolution solve_darcy(const Darcy2DModel& model, const Vector& u);

/// Cosine Karhunen–Loève prior on the unit square with eigenvalues
/// (π²(k² + l²) + τ²)^{-α} for the s lowest-frequency modes (k, l) in
/// {1..s}², ordered by k² + l² and then lexicographically.
struct KLPrior2D {
  double tau_prior = 0.01;
  double alpha = 2.0;
  Index s = 25;
  std::vector<std::pair<int, int>> modes;
  Vector eigenvalues;
  Matrix basis;  ///< nodal values of e_j, d x s

  static KLPrior2D build(const Matrix& nodes, double tau_prior = 0.01, double alpha = 2.0,
                         Index s = 25);
  /// E Λ Eᵀ + nugget * (its largest eigenvalue) * I.
  Matrix covariance(double nugget) const;
};

Matrix kl_field_2d(const KLPrior2D& prior, const Matrix& xi);
Matrix sample_kl_2d(const KLPrior2D& prior, Index count, std::uint64_t seed);

/// Uniform bounds a = min u + slack |min u|, b = max u - slack |max u| on
/// every component.  Throws InvalidBounds when a >= b.
BoxBounds make_box_from_truth(const Vector& u_truth, double slack = 0.3);

}  // namespace beki
