#pragma once

// Caratheodory recombination: reduce a discrete probability measure to at
// most m + 1 atoms while preserving the integrals of m test functions.
//
// Points are grouped into 2(m + 1) blocks; the block barycentres are reduced
// with an exact Caratheodory step and the surviving blocks are recursed on,
// so the cost is O(N m + m^3 log(N / m)).

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/QR>

#include "core.hpp"

namespace sober {

struct Recombined {
  std::vector<Index> indices;
  Vector weights;
};

namespace detail {

/// Exact Caratheodory reduction of `weights` over the rows of `A`
/// (k x D, first column constant). Returns new weights with at most rank(A)
/// non-zero entries and A^T w unchanged. Ties go to the lowest index.
inline Vector caratheodory_step(const Matrix& A, Vector weights) {
  const Index k = A.rows();
  if (k <= 1) return weights;
  Eigen::ColPivHouseholderQR<Matrix> qr(A);
  qr.setThreshold(1e-12);
  const Index rank = qr.rank();
  if (rank >= k) return weights;
  Matrix Q = qr.householderQ() * Matrix::Identity(k, k);
  Matrix null = Q.rightCols(k - rank);

  std::vector<bool> alive(static_cast<std::size_t>(k), true);
  for (Index col = 0; col < null.cols(); ++col) {
    Vector c = null.col(col);
    for (Index i = 0; i < k; ++i)
      if (!alive[static_cast<std::size_t>(i)]) c(i) = 0.0;
    const double scale = c.cwiseAbs().maxCoeff();
    if (!(scale > 0.0)) continue;
    if (c.maxCoeff() <= 1e-14 * scale) c = -c;
    Index hit = -1;
    double step = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < k; ++i) {
      if (!alive[static_cast<std::size_t>(i)] || c(i) <= 1e-14 * scale) continue;
      const double ratio = weights(i) / c(i);
      if (ratio < step) {
        step = ratio;
        hit = i;
      }
    }
    if (hit < 0) continue;
    weights -= step * c;
    weights(hit) = 0.0;
    alive[static_cast<std::size_t>(hit)] = false;
    for (Index i = 0; i < k; ++i)
      if (weights(i) < 0.0) weights(i) = 0.0;
    for (Index other = col + 1; other < null.cols(); ++other)
      null.col(other) -= (null(hit, other) / c(hit)) * c;
  }
  return weights;
}

}  // namespace detail

/// Reduces (weights, rows of `moments`) to at most moments.cols() + 1 atoms
/// with the same total mass and the same moment integrals.
inline Recombined recombine(const Vector& weights, const Matrix& moments) {
  if (weights.size() != moments.rows()) throw DimensionError("weights and moment rows differ in length");
  const Index D = moments.cols() + 1;

  std::vector<Index> alive;
  for (Index i = 0; i < weights.size(); ++i)
    if (weights(i) > 0.0) alive.push_back(i);
  Vector mu = weights;

  // Column equilibration leaves the preserved integrals unchanged.
  Matrix V(moments.rows(), D);
  V.col(0).setOnes();
  for (Index j = 0; j < moments.cols(); ++j) {
    const double s = moments.col(j).cwiseAbs().maxCoeff();
    V.col(j + 1) = s > 0.0 ? Vector(moments.col(j) / s) : Vector(moments.col(j));
  }

  while (static_cast<Index>(alive.size()) > D) {
    const auto count = static_cast<Index>(alive.size());
    const Index blocks = std::min<Index>(2 * D, count);
    std::vector<Index> start(static_cast<std::size_t>(blocks + 1));
    for (Index b = 0; b <= blocks; ++b) start[static_cast<std::size_t>(b)] = b * count / blocks;

    Matrix G(blocks, D);
    Vector W(blocks);
    for (Index b = 0; b < blocks; ++b) {
      double mass = 0.0;
      Vector g = Vector::Zero(D);
      for (Index p = start[static_cast<std::size_t>(b)]; p < start[static_cast<std::size_t>(b + 1)]; ++p) {
        const Index i = alive[static_cast<std::size_t>(p)];
        mass += mu(i);
        g += mu(i) * V.row(i).transpose();
      }
      W(b) = mass;
      G.row(b) = (g / mass).transpose();
    }
    const Vector W2 = detail::caratheodory_step(G, W);

    std::vector<Index> next;
    for (Index b = 0; b < blocks; ++b) {
      if (!(W2(b) > 0.0)) continue;
      const double ratio = W2(b) / W(b);
      for (Index p = start[static_cast<std::size_t>(b)]; p < start[static_cast<std::size_t>(b + 1)]; ++p) {
        const Index i = alive[static_cast<std::size_t>(p)];
        mu(i) *= ratio;
        if (mu(i) > 0.0) next.push_back(i);
      }
    }
    if (next.size() == alive.size()) break;  // no progress: numerically full rank blocks
    alive = std::move(next);
  }

  // Final pass on individual atoms drops to rank + 1 for degenerate moments.
  Matrix A = select_rows(V, alive);
  Vector local(static_cast<Index>(alive.size()));
  for (std::size_t p = 0; p < alive.size(); ++p) local(static_cast<Index>(p)) = mu(alive[p]);
  local = detail::caratheodory_step(A, local);

  Recombined out;
  std::vector<double> w;
  for (std::size_t p = 0; p < alive.size(); ++p)
    if (local(static_cast<Index>(p)) > 0.0) {
      out.indices.push_back(alive[p]);
      w.push_back(local(static_cast<Index>(p)));
    }
  out.weights = Eigen::Map<Vector>(w.data(), static_cast<Index>(w.size()));
  return out;
}

}  // namespace sober
