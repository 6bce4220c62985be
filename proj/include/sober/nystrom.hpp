#pragma once

// Nystrom test functions phi_j(x) = u_j^T C(X^M, x) of a covariance kernel,
// built from landmarks drawn from an empirical measure.

#include <algorithm>
#include <random>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "core.hpp"
#include "covariance.hpp"
#include "domain.hpp"

namespace sober {

struct NystromOptions {
  /// Randomised range finder instead of the dense eigensolver; only used
  /// when the landmark count exceeds `randomized_threshold`.
  bool randomized = false;
  Index randomized_threshold = 1000;
  Index oversampling = 10;
  int power_iterations = 2;
};

struct NystromBasis {
  Matrix landmarks;
  /// Non-increasing, clamped at zero.
  Vector eigenvalues;
  /// Columns are eigenvectors; M x M for the dense solver.
  Matrix eigenvectors;
  Index rank = 0;
  Index requested_rank = 0;
  CovarianceFunction kernel;

  Vector active_eigenvalues() const { return eigenvalues.head(rank); }
};

namespace detail {

inline void sorted_eigen(const Matrix& S, Vector& values, Matrix& vectors) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  if (es.info() != Eigen::Success) throw std::runtime_error("symmetric eigensolver failed");
  values = es.eigenvalues().reverse().cwiseMax(0.0);
  vectors = es.eigenvectors().rowwise().reverse();
}

}  // namespace detail

/// Basis over explicit landmarks; rank is truncated to the positive spectrum.
inline NystromBasis build_basis_from_landmarks(const CovarianceFunction& kernel, Matrix landmarks, Index rank,
                                               std::uint64_t seed = 0, const NystromOptions& options = {});

/// Landmarks are drawn i.i.d. in proportion to the measure weights.
inline NystromBasis build_basis(const CovarianceFunction& kernel, const EmpiricalMeasure& measure, Index landmarks,
                                Index rank, std::uint64_t seed, const NystromOptions& options = {}) {
  if (landmarks < 1 || landmarks > measure.size())
    throw std::invalid_argument("landmark count must lie in [1, N]");
  if (rank < 0 || rank > landmarks) throw std::invalid_argument("rank must lie in [0, M]");
  Rng rng(seed);
  std::discrete_distribution<Index> pick(measure.weights.data(), measure.weights.data() + measure.weights.size());
  std::vector<Index> rows(static_cast<std::size_t>(landmarks));
  for (auto& r : rows) r = pick(rng);
  return build_basis_from_landmarks(kernel, select_rows(measure.points, rows), rank, seed, options);
}

inline NystromBasis build_basis_from_landmarks(const CovarianceFunction& kernel, Matrix landmarks, Index rank,
                                               std::uint64_t seed, const NystromOptions& options) {
  NystromBasis basis{std::move(landmarks), {}, {}, 0, rank, kernel};
  const Index M = basis.landmarks.rows();
  const Matrix G = kernel.symmetric(basis.landmarks);
  if (options.randomized && M > options.randomized_threshold && rank + options.oversampling < M) {
    Rng rng(derive_seed(seed, 7));
    const Index k = rank + options.oversampling;
    Matrix Q(M, k);
    for (Index j = 0; j < k; ++j) Q.col(j) = standard_normal_vector(M, rng);
    Q = G * Q;
    for (int it = 0; it < options.power_iterations; ++it) {
      Q = Eigen::HouseholderQR<Matrix>(Q).householderQ() * Matrix::Identity(M, k);
      Q = G * Q;
    }
    Q = Eigen::HouseholderQR<Matrix>(Q).householderQ() * Matrix::Identity(M, k);
    const Matrix B = Q.transpose() * G * Q;
    Matrix V;
    detail::sorted_eigen(0.5 * (B + B.transpose()), basis.eigenvalues, V);
    basis.eigenvectors = Q * V;
  } else {
    detail::sorted_eigen(G, basis.eigenvalues, basis.eigenvectors);
  }
  const double top = basis.eigenvalues.size() ? basis.eigenvalues(0) : 0.0;
  Index positive = 0;
  while (positive < basis.eigenvalues.size() && top > 0.0 && basis.eigenvalues(positive) > 1e-12 * top) ++positive;
  basis.rank = std::min(rank, positive);
  return basis;
}

/// P x r matrix of phi_j(x) = u_j^T C(X^M, x).
inline Matrix test_functions(const NystromBasis& basis, const Matrix& points) {
  if (basis.rank == 0) return Matrix(points.rows(), 0);
  return basis.kernel(points, basis.landmarks) * basis.eigenvectors.leftCols(basis.rank);
}

/// sqrt((C - C~)(x, x)) with C~(x, x) = sum_j phi_j(x)^2 / lambda_j.
inline Vector residual_diagonal(const NystromBasis& basis, const Matrix& points) {
  const Vector diag = basis.kernel.diagonal(points);
  Vector approx = Vector::Zero(points.rows());
  if (basis.rank > 0) {
    const Matrix phi = test_functions(basis, points);
    approx = phi.array().square().matrix() * basis.active_eigenvalues().cwiseInverse();
  }
  return (diag - approx).cwiseMax(0.0).cwiseSqrt();
}

/// epsilon_nys: the largest residual over the points.
inline double nystrom_error(const NystromBasis& basis, const Matrix& points) {
  return residual_diagonal(basis, points).maxCoeff();
}

}  // namespace sober
