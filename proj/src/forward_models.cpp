#include "beki/forward_models.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "beki/errors.hpp"

namespace beki {

std::shared_ptr<const PseudolinearMap> Heat1DModel::map() const {
  return std::make_shared<PseudolinearMap>(a, eps);
}

Heat1DModel build_heat1d(double dx, double dt, double eps) {
  if (!(dx > 0.0) || !(dt > 0.0)) throw InvalidInput("heat1d needs dx > 0 and dt > 0");
  const double cells = 1.0 / dx;
  const auto n_cells = static_cast<Index>(std::llround(cells));
  if (n_cells < 2 || std::abs(cells - static_cast<double>(n_cells)) > 1e-9 * cells) {
    throw InvalidInput("heat1d needs 1/dx to be an integer >= 2");
  }
  Heat1DModel m;
  m.n_interior = n_cells - 1;
  m.dx = dx;
  m.dt = dt;
  m.eps = eps;
  const Index n = m.n_interior;
  m.grid = Vector::LinSpaced(n, dx, dx * static_cast<double>(n));

  // I - dt D2 with D2 = tridiag(1, -2, 1) / dx².
  const double off = -dt / (dx * dx);
  Matrix system = Matrix::Identity(n, n);
  for (Index i = 0; i < n; ++i) {
    system(i, i) += -2.0 * off;
    if (i > 0) system(i, i - 1) = off;
    if (i + 1 < n) system(i, i + 1) = off;
  }
  Matrix a = dt * system.llt().solve(Matrix::Identity(n, n));
  m.a = 0.5 * (a + a.transpose());
  return m;
}

KLPrior1D KLPrior1D::build(const Vector& grid, double sigma2, double length_scale, Index r) {
  const Index d = grid.size();
  if (d < 1 || r < 1 || r > d) throw InvalidInput("KL truncation must satisfy 1 <= r <= d");
  if (!(sigma2 > 0.0) || !(length_scale > 0.0)) {
    throw InvalidInput("KL prior needs sigma2 > 0 and length scale > 0");
  }
  KLPrior1D p;
  p.sigma2 = sigma2;
  p.length_scale = length_scale;
  p.r = r;
  p.grid = grid;
  p.kernel.resize(d, d);
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) {
      const double diff = grid(i) - grid(j);
      p.kernel(i, j) = sigma2 * std::exp(-diff * diff / length_scale);
    }
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(p.kernel);
  if (eig.info() != Eigen::Success) throw FactorizationError("kernel eigendecomposition failed");
  // Ascending order from Eigen; take the top r reversed.
  p.eigenvalues.resize(r);
  p.eigenvectors.resize(d, r);
  for (Index i = 0; i < r; ++i) {
    double lam = eig.eigenvalues()(d - 1 - i);
    if (lam < 0.0) {
      lam = 0.0;
      ++p.clamped_negative;
    }
    p.eigenvalues(i) = lam;
    p.eigenvectors.col(i) = eig.eigenvectors().col(d - 1 - i);
  }
  return p;
}

Matrix KLPrior1D::covariance(double nugget) const {
  Matrix c = kernel;
  c.diagonal().array() += nugget * eigenvalues(0);
  return c;
}

Matrix kl_field_1d(const KLPrior1D& prior, const Matrix& xi) {
  if (xi.rows() != prior.r) throw InvalidInput("KL coefficient count must equal r");
  return prior.eigenvectors * (prior.eigenvalues.array().sqrt().matrix().asDiagonal() * xi);
}

Matrix sample_kl_1d(const KLPrior1D& prior, Index count, std::uint64_t seed) {
  Rng rng(seed);
  return kl_field_1d(prior, standard_normal(prior.r, count, rng));
}

namespace {

Eigen::Matrix3d unit_stiffness(const Eigen::Vector2d& p0, const Eigen::Vector2d& p1,
                               const Eigen::Vector2d& p2, double& area) {
  Eigen::Matrix2d b;
  b.col(0) = p1 - p0;
  b.col(1) = p2 - p0;
  area = 0.5 * std::abs(b.determinant());
  // Rows of B^{-1} are the gradients of the barycentric coordinates 1 and 2.
  const Eigen::Matrix2d binv = b.inverse();
  Eigen::Matrix<double, 3, 2> grads;
  grads.row(1) = binv.row(0);
  grads.row(2) = binv.row(1);
  grads.row(0) = -grads.row(1) - grads.row(2);
  return area * grads * grads.transpose();
}

}  // namespace

Darcy2DModel::Darcy2DModel(int n, double f, int k_obs, std::uint64_t obs_seed)
    : n_(n), f_(f) {
  if (k_obs < 1) throw InvalidInput("darcy needs at least one observation point");
  Rng rng(obs_seed);
  std::uniform_real_distribution<double> unif(0.1, 0.9);
  obs_points_.resize(k_obs, 2);
  for (int k = 0; k < k_obs; ++k) {
    obs_points_(k, 0) = unif(rng);
    obs_points_(k, 1) = unif(rng);
  }
  build_mesh();
}

Darcy2DModel::Darcy2DModel(int n, double f, Matrix obs_points)
    : n_(n), f_(f), obs_points_(std::move(obs_points)) {
  if (obs_points_.cols() != 2 || obs_points_.rows() < 1) {
    throw InvalidInput("observation points must be a nonempty k x 2 matrix");
  }
  if ((obs_points_.array() < 0.0).any() || (obs_points_.array() > 1.0).any()) {
    throw InvalidInput("observation points must lie in the unit square");
  }
  build_mesh();
}

void Darcy2DModel::build_mesh() {
  if (n_ < 3) throw InvalidInput("darcy mesh needs n >= 3");
  if (!std::isfinite(f_)) throw InvalidInput("darcy source must be finite");
  const double h = 1.0 / (n_ - 1);
  const Index nn = static_cast<Index>(n_) * n_;
  free_index_.assign(nn, -1);
  n_free_ = 0;
  for (int j = 1; j + 1 < n_; ++j) {
    for (int i = 1; i + 1 < n_; ++i) free_index_[i + n_ * j] = n_free_++;
  }
  triangles_.clear();
  for (int j = 0; j + 1 < n_; ++j) {
    for (int i = 0; i + 1 < n_; ++i) {
      const Index v00 = i + n_ * j;
      const Index v10 = v00 + 1;
      const Index v01 = v00 + n_;
      const Index v11 = v01 + 1;
      triangles_.push_back({v00, v10, v11});
      triangles_.push_back({v00, v11, v01});
    }
  }
  local_[0] = unit_stiffness({0, 0}, {h, 0}, {h, h}, area_);
  local_[1] = unit_stiffness({0, 0}, {h, h}, {0, h}, area_);
  stencils_.clear();
  for (Index k = 0; k < obs_points_.rows(); ++k) {
    stencils_.push_back(locate(obs_points_(k, 0), obs_points_(k, 1)));
  }
}

Darcy2DModel::ObsStencil Darcy2DModel::locate(double x1, double x2) const {
  const double h = 1.0 / (n_ - 1);
  const int i = std::clamp(static_cast<int>(std::floor(x1 / h)), 0, n_ - 2);
  const int j = std::clamp(static_cast<int>(std::floor(x2 / h)), 0, n_ - 2);
  const double xi = x1 / h - i;
  const double eta = x2 / h - j;
  const Index v00 = i + static_cast<Index>(n_) * j;
  const Index v10 = v00 + 1;
  const Index v01 = v00 + n_;
  const Index v11 = v01 + 1;
  if (xi >= eta) return {{v00, v10, v11}, {1.0 - xi, xi - eta, eta}};
  return {{v00, v11, v01}, {1.0 - eta, xi, eta - xi}};
}

Matrix Darcy2DModel::node_coordinates() const {
  const double h = 1.0 / (n_ - 1);
  Matrix xy(static_cast<Index>(n_) * n_, 2);
  for (int j = 0; j < n_; ++j) {
    for (int i = 0; i < n_; ++i) {
      xy(i + static_cast<Index>(n_) * j, 0) = i * h;
      xy(i + static_cast<Index>(n_) * j, 1) = j * h;
    }
  }
  return xy;
}

double Darcy2DModel::interpolate(const Vector& nodal, double x1, double x2) const {
  if (nodal.size() != input_dim()) throw InvalidInput("nodal field has the wrong size");
  const ObsStencil s = locate(x1, x2);
  return s.weight[0] * nodal(s.node[0]) + s.weight[1] * nodal(s.node[1]) +
         s.weight[2] * nodal(s.node[2]);
}

using SparseMatrix = Eigen::SparseMatrix<double>;

struct Darcy2DModel::System {
  Eigen::SimplicialLLT<SparseMatrix> llt;
  Vector p_full;  // nodal pressure, zero on the boundary
};

void Darcy2DModel::assemble_and_solve(const Vector& u, System& sys) const {
  if (u.size() != input_dim()) throw InvalidInput("darcy parameter has the wrong size");
  if (!u.allFinite()) throw InvalidInput("darcy parameter must be finite");
  const Vector expu = u.array().exp().matrix();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(triangles_.size() * 9);
  Vector load = Vector::Zero(n_free_);
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    const auto& v = triangles_[t];
    const double kappa = (expu(v[0]) + expu(v[1]) + expu(v[2])) / 3.0;
    const Eigen::Matrix3d& kl = local_[t % 2];
    for (int a = 0; a < 3; ++a) {
      const Index ia = free_index_[v[a]];
      if (ia < 0) continue;
      load(ia) += f_ * area_ / 3.0;
      for (int b = 0; b < 3; ++b) {
        const Index ib = free_index_[v[b]];
        if (ib >= 0) trips.emplace_back(ia, ib, kappa * kl(a, b));
      }
    }
  }
  SparseMatrix s(n_free_, n_free_);
  s.setFromTriplets(trips.begin(), trips.end());
  sys.llt.compute(s);
  if (sys.llt.info() != Eigen::Success) throw SolverFailure("darcy stiffness factorization failed");
  const Vector p_free = sys.llt.solve(load);
  if (sys.llt.info() != Eigen::Success || !p_free.allFinite()) {
    throw SolverFailure("darcy solve failed");
  }
  sys.p_full = Vector::Zero(input_dim());
  for (Index node = 0; node < input_dim(); ++node) {
    if (free_index_[node] >= 0) sys.p_full(node) = p_free(free_index_[node]);
  }
}

DarcySolution Darcy2DModel::solve(const Vector& u) const {
  System sys;
  assemble_and_solve(u, sys);
  DarcySolution out;
  out.observations.resize(output_dim());
  for (Index k = 0; k < output_dim(); ++k) {
    const ObsStencil& s = stencils_[k];
    out.observations(k) = s.weight[0] * sys.p_full(s.node[0]) +
                          s.weight[1] * sys.p_full(s.node[1]) +
                          s.weight[2] * sys.p_full(s.node[2]);
  }
  out.pressure = std::move(sys.p_full);
  return out;
}

Vector Darcy2DModel::apply(const Vector& u) const { return solve(u).observations; }

Matrix Darcy2DModel::jacobian(const Vector& u) const {
  Matrix jac(output_dim(), input_dim());
  for (Index k = 0; k < output_dim(); ++k) {
    jac.row(k) = jacobian_transpose_apply(u, Vector::Unit(output_dim(), k)).transpose();
  }
  return jac;
}

Vector Darcy2DModel::jacobian_transpose_apply(const Vector& u, const Vector& w) const {
  if (w.size() != output_dim()) throw InvalidInput("adjoint weight has the wrong size");
  System sys;
  assemble_and_solve(u, sys);

  // Adjoint: S λ = Oᵀ w restricted to the free nodes.
  Vector rhs = Vector::Zero(n_free_);
  for (Index k = 0; k < output_dim(); ++k) {
    const ObsStencil& s = stencils_[k];
    for (int a = 0; a < 3; ++a) {
      const Index ia = free_index_[s.node[a]];
      if (ia >= 0) rhs(ia) += s.weight[a] * w(k);
    }
  }
  const Vector lam_free = sys.llt.solve(rhs);
  Vector lam = Vector::Zero(input_dim());
  for (Index node = 0; node < input_dim(); ++node) {
    if (free_index_[node] >= 0) lam(node) = lam_free(free_index_[node]);
  }

  // d(obs)/du_k = -λᵀ (∂S/∂u_k) p with ∂κ_T/∂u_k = exp(u_k)/3 for k ∈ T.
  Vector grad = Vector::Zero(input_dim());
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    const auto& v = triangles_[t];
    const Eigen::Vector3d lt(lam(v[0]), lam(v[1]), lam(v[2]));
    const Eigen::Vector3d pt(sys.p_full(v[0]), sys.p_full(v[1]), sys.p_full(v[2]));
    const double s = lt.dot(local_[t % 2] * pt);
    for (int a = 0; a < 3; ++a) grad(v[a]) -= std::exp(u(v[a])) / 3.0 * s;
  }
  return grad;
}

DarcySolution solve_darcy(const Darcy2DModel& model, const Vector& u) { return model.solve(u); }

KLPrior2D KLPrior2D::build(const Matrix& nodes, double tau_prior, double alpha, Index s) {
  if (nodes.cols() != 2) throw InvalidInput("KL2D nodes must be a d x 2 matrix");
  if (s < 1) throw InvalidInput("KL2D truncation must be >= 1");
  if (!(alpha > 0.0)) throw InvalidInput("KL2D decay exponent must be positive");
  KLPrior2D p;
  p.tau_prior = tau_prior;
  p.alpha = alpha;
  p.s = s;
  std::vector<std::pair<int, int>> all;
  for (int k = 1; k <= s; ++k) {
    for (int l = 1; l <= s; ++l) all.emplace_back(k, l);
  }
  std::stable_sort(all.begin(), all.end(), [](const auto& x, const auto& y) {
    const int fx = x.first * x.first + x.second * x.second;
    const int fy = y.first * y.first + y.second * y.second;
    return fx != fy ? fx < fy : x < y;
  });
  p.modes.assign(all.begin(), all.begin() + s);
  p.eigenvalues.resize(s);
  p.basis.resize(nodes.rows(), s);
  constexpr double pi = std::numbers::pi;
  for (Index j = 0; j < s; ++j) {
    const auto [k, l] = p.modes[j];
    p.eigenvalues(j) = std::pow(pi * pi * (k * k + l * l) + tau_prior * tau_prior, -alpha);
    for (Index i = 0; i < nodes.rows(); ++i) {
      p.basis(i, j) = std::cos(pi * nodes(i, 0) * k) * std::cos(pi * nodes(i, 1) * l);
    }
  }
  return p;
}

Matrix KLPrior2D::covariance(double nugget) const {
  Matrix c = basis * eigenvalues.asDiagonal() * basis.transpose();
  c = 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(c, Eigen::EigenvaluesOnly);
  c.diagonal().array() += nugget * eig.eigenvalues().maxCoeff();
  return c;
}

Matrix kl_field_2d(const KLPrior2D& prior, const Matrix& xi) {
  if (xi.rows() != prior.s) throw InvalidInput("KL coefficient count must equal s");
  return prior.basis * (prior.eigenvalues.array().sqrt().matrix().asDiagonal() * xi);
}

Matrix sample_kl_2d(const KLPrior2D& prior, Index count, std::uint64_t seed) {
  Rng rng(seed);
  return kl_field_2d(prior, standard_normal(prior.s, count, rng));
}

BoxBounds make_box_from_truth(const Vector& u_truth, double slack) {
  if (u_truth.size() == 0) throw InvalidBounds("truth vector is empty");
  const double lo = u_truth.minCoeff();
  const double hi = u_truth.maxCoeff();
  const double a = lo + slack * std::abs(lo);
  const double b = hi - slack * std::abs(hi);
  if (!(a < b)) throw InvalidBounds("box from truth is empty (a >= b)");
  return BoxBounds::uniform(u_truth.size(), a, b);
}

}  // namespace beki
