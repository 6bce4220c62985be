#pragma once

// Lifted targets over the location of the maximiser: the probability-of-
// improvement synthetic likelihood, a Thompson-sampling argmax measure, and a
// feasibility tilt for black-box constraints.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "domain.hpp"
#include "gp.hpp"
#include "normal.hpp"

namespace sober {

enum class TargetMode { LFI, TS, ALUniform, BQPrior };

/// Constraint GPs; a point is feasible when every g_l(x) >= 0.
struct ConstraintModel {
  std::vector<GPPosterior> models;

  Index size() const { return static_cast<Index>(models.size()); }
  bool empty() const { return models.empty(); }
};

/// Incumbent under noise: the largest posterior mean over the queried inputs.
inline double incumbent(const GPPosterior& gp) {
  if (gp.data().empty()) throw std::invalid_argument("incumbent needs at least one observation");
  return gp.mean(gp.data().X).maxCoeff();
}

/// log Phi((m_t(x) - y_best) / sqrt(C_t(x, x))), variance floored at 1e-12.
inline LogDensityFn lfi_log_pi(const GPPosterior& gp, double y_best) {
  return [&gp, y_best](const Matrix& X) -> Vector {
    const Vector m = gp.mean(X);
    const Vector v = gp.variance(X);
    Vector out(X.rows());
    for (Index i = 0; i < X.rows(); ++i) out(i) = normal::log_cdf((m(i) - y_best) / std::sqrt(std::max(v(i), 1e-12)));
    return out;
  };
}

struct ThompsonOptions {
  Index dense_limit = 4096;
  /// Permits candidate sets above `dense_limit` by sampling independent
  /// chunks. Cross-chunk correlation is dropped, so the result is approximate.
  bool allow_chunking = false;
};

/// Argmax frequencies of joint posterior draws over a finite candidate set.
inline EmpiricalMeasure ts_empirical(const GPPosterior& gp, const Matrix& candidates, Index draws, std::uint64_t seed,
                                     const ThompsonOptions& options = {}) {
  if (draws < 1) throw std::invalid_argument("thompson sampling needs at least one draw");
  const Index n = candidates.rows();
  if (n < 1) throw std::invalid_argument("thompson sampling needs candidates");
  if (n > options.dense_limit && !options.allow_chunking)
    throw std::invalid_argument("candidate count " + std::to_string(n) + " exceeds the dense sampling limit " +
                                std::to_string(options.dense_limit));
  Rng rng(seed);
  const Vector mean = gp.mean(candidates);
  std::vector<Matrix> factors;
  std::vector<Index> offsets;
  std::vector<bool> triangular;
  for (Index start = 0; start < n; start += options.dense_limit) {
    const Index len = std::min(options.dense_limit, n - start);
    const Matrix block = candidates.middleRows(start, len);
    const Matrix cov = gp.covariance(block);
    try {
      const auto f = detail::robust_cholesky(cov);
      factors.emplace_back(f.llt.matrixL());
      triangular.push_back(true);
    } catch (const FactorisationError&) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
      factors.emplace_back(es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal());
      triangular.push_back(false);
    }
    offsets.push_back(start);
  }
  Vector counts = Vector::Zero(n);
  constexpr Index block = 128;
  Matrix samples(n, block);
  for (Index done = 0; done < draws; done += block) {
    const Index cols = std::min(block, draws - done);
    Matrix noise(n, cols);
    for (Index c = 0; c < cols; ++c) noise.col(c) = standard_normal_vector(n, rng);
    for (std::size_t b = 0; b < factors.size(); ++b) {
      const Index len = factors[b].rows();
      auto target = samples.block(offsets[b], 0, len, cols);
      if (triangular[b]) target.noalias() = factors[b].triangularView<Eigen::Lower>() * noise.middleRows(offsets[b], len);
      else target.noalias() = factors[b] * noise.middleRows(offsets[b], len);
    }
    for (Index c = 0; c < cols; ++c) {
      Index arg;
      (samples.col(c) + mean).maxCoeff(&arg);
      counts(arg) += 1.0;
    }
  }
  return EmpiricalMeasure(candidates, counts / static_cast<double>(draws));
}

/// Joint feasibility q(x) = prod_l Phi(m_l(x) / sqrt(C_l(x, x) + sigma_l^2)).
inline Vector feasibility(const ConstraintModel& constraints, const Matrix& X) {
  Vector q = Vector::Ones(X.rows());
  for (const auto& model : constraints.models) {
    const Vector m = model.mean(X);
    const Vector v = model.variance(X);
    const double noise = model.data().noise_variance;
    for (Index i = 0; i < X.rows(); ++i) {
      const double sd = std::sqrt(v(i) + noise);
      double ql;
      if (sd > 0.0) ql = normal::cdf(m(i) / sd);
      else ql = m(i) > 0.0 ? 1.0 : (m(i) < 0.0 ? 0.0 : 0.5);
      q(i) *= ql;
    }
  }
  return q;
}

/// Base target tilted by log joint feasibility.
inline LogDensityFn constrained_log_pi(LogDensityFn base, const ConstraintModel& constraints) {
  return [base = std::move(base), &constraints](const Matrix& X) -> Vector {
    Vector out = base(X);
    if (constraints.empty()) return out;
    const Vector q = feasibility(constraints, X);
    for (Index i = 0; i < X.rows(); ++i) out(i) += q(i) > 0.0 ? std::log(q(i)) : -std::numeric_limits<double>::infinity();
    return out;
  };
}

}  // namespace sober
