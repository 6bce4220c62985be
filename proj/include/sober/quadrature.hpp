#pragma once

// Batch selection by kernel quadrature over an empirical measure.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"
#include "covariance.hpp"
#include "domain.hpp"
#include "gp.hpp"
#include "lifting.hpp"
#include "normal.hpp"
#include "nystrom.hpp"
#include "recombination.hpp"
#include "simplex.hpp"

namespace sober {

struct QuadratureDiagnostics {
  std::string solver;
  Index rank_used = 0;
  double eps_lp = 0.0;
  double eps_vio = 0.0;
  double eps_nys = 0.0;
  double mmd2 = 0.0;
  double objective = 0.0;
  double baseline_objective = 0.0;
  /// max_j |(w^n)^T phi_j(X^n) - (w^N)^T phi_j(X^N)| / (1 + column scale).
  double moment_residual = 0.0;
  /// Per test function: bound minus achieved moment gap (LP only).
  Vector moment_slack;
  double feasibility_slack = 0.0;
};

/// Convex weighted subset of a parent measure.
struct QuadratureRule {
  Matrix points;
  Vector weights;
  std::vector<Index> indices;
  QuadratureDiagnostics diagnostics;

  Index size() const { return points.rows(); }

  void validate() const {
    if (points.rows() != weights.size() || static_cast<Index>(indices.size()) != weights.size())
      throw DimensionError("quadrature rule fields differ in length");
    if ((weights.array() <= 0.0).any()) throw std::invalid_argument("quadrature weights must be positive");
    if (std::abs(weights.sum() - 1.0) > 1e-10) throw std::invalid_argument("quadrature weights must sum to one");
  }
};

/// Builds a rule from parent indices and weights: non-positive weights are
/// pruned, identical rows are merged and the weights renormalised.
inline QuadratureRule make_rule(const EmpiricalMeasure& parent, const std::vector<Index>& indices, const Vector& weights,
                                double prune_below = 1e-14) {
  std::vector<Index> idx;
  std::vector<double> w;
  const double top = weights.size() ? weights.maxCoeff() : 0.0;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const double wk = weights(static_cast<Index>(k));
    if (!(wk > prune_below * top)) continue;
    bool merged = false;
    for (std::size_t j = 0; j < idx.size(); ++j)
      if (parent.points.row(idx[j]) == parent.points.row(indices[k])) {
        w[j] += wk;
        merged = true;
        break;
      }
    if (!merged) {
      idx.push_back(indices[k]);
      w.push_back(wk);
    }
  }
  if (idx.empty()) throw std::runtime_error("quadrature rule has no positive weights");
  QuadratureRule rule;
  rule.indices = idx;
  rule.points = select_rows(parent.points, idx);
  rule.weights = Eigen::Map<Vector>(w.data(), static_cast<Index>(w.size()));
  rule.weights /= rule.weights.sum();
  return rule;
}

// ---------------------------------------------------------------------------
// Reward

enum class RewardKind { Zero, UCB, EI };

struct AcquisitionConfig {
  RewardKind reward = RewardKind::Zero;
  double beta = 2.0;

  void validate() const {
    if (reward == RewardKind::UCB && !(beta > 0.0)) throw std::invalid_argument("UCB beta must be positive");
  }
};

inline Vector reward(const GPPosterior& gp, const AcquisitionConfig& config, const Matrix& X) {
  config.validate();
  switch (config.reward) {
    case RewardKind::Zero:
      return Vector::Zero(X.rows());
    case RewardKind::UCB:
      return gp.mean(X) + std::sqrt(config.beta) * gp.variance(X).cwiseSqrt();
    case RewardKind::EI: {
      const double best = incumbent(gp);
      const Vector m = gp.mean(X);
      const Vector s = gp.variance(X).cwiseSqrt();
      Vector out(X.rows());
      for (Index i = 0; i < X.rows(); ++i) {
        const double gap = m(i) - best;
        if (s(i) <= 1e-12 * std::sqrt(gp.outputscale())) {
          out(i) = std::max(gap, 0.0);
        } else {
          const double z = gap / s(i);
          out(i) = gap * normal::cdf(z) + s(i) * normal::pdf(z);
        }
      }
      return out;
    }
  }
  return Vector::Zero(X.rows());
}

// ---------------------------------------------------------------------------
// Worst-case error

struct MmdResult {
  double mmd2 = 0.0;
  double raw = 0.0;
  double wce() const { return std::sqrt(mmd2); }
};

/// Quadratic form w_n^T C w_n - 2 w_n^T C w_N + w_N^T C w_N, clamped at zero.
inline MmdResult mmd_squared(const Matrix& rule_points, const Vector& rule_weights, const EmpiricalMeasure& measure,
                             const CovarianceFunction& kernel) {
  const double nn = kernel.bilinear(rule_points, rule_weights, rule_points, rule_weights);
  const double nN = kernel.bilinear(rule_points, rule_weights, measure.points, measure.weights);
  const double NN = kernel.bilinear(measure.points, measure.weights, measure.points, measure.weights);
  MmdResult r;
  r.raw = nn - 2.0 * nN + NN;
  r.mmd2 = std::max(r.raw, 0.0);
  return r;
}

inline MmdResult mmd_squared(const QuadratureRule& rule, const EmpiricalMeasure& measure,
                             const CovarianceFunction& kernel) {
  return mmd_squared(rule.points, rule.weights, measure, kernel);
}

// ---------------------------------------------------------------------------
// Solvers

namespace detail {

inline double moment_residual(const Matrix& phi, const Vector& parent_w, const std::vector<Index>& idx,
                              const Vector& w) {
  double worst = 0.0;
  for (Index j = 0; j < phi.cols(); ++j) {
    double rule = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) rule += w(static_cast<Index>(k)) * phi(idx[k], j);
    const double target = parent_w.dot(phi.col(j));
    const double scale = phi.col(j).cwiseAbs().maxCoeff();
    worst = std::max(worst, std::abs(rule - target) / (1.0 + scale));
  }
  return worst;
}

}  // namespace detail

/// Exact moment matching of n - 1 test functions with at most n atoms.
inline QuadratureRule recombination(const EmpiricalMeasure& measure, const Matrix& moments, Index n) {
  measure.validate();
  if (n < 1) throw std::invalid_argument("batch size must be at least one");
  if (moments.rows() != measure.size()) throw DimensionError("moment matrix rows must match the measure size");
  if (moments.cols() > std::max<Index>(n - 1, 0))
    throw std::invalid_argument("recombination preserves at most n - 1 test functions");
  std::vector<Index> idx;
  Vector w;
  if (measure.size() <= n) {
    idx.resize(static_cast<std::size_t>(measure.size()));
    for (Index i = 0; i < measure.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
    w = measure.weights;
  } else {
    const Recombined r = recombine(measure.weights, moments);
    idx = r.indices;
    w = r.weights;
  }
  QuadratureRule rule = make_rule(measure, idx, w, 0.0);
  rule.diagnostics.solver = "recombination";
  rule.diagnostics.rank_used = moments.cols();
  rule.diagnostics.moment_residual = detail::moment_residual(moments, measure.weights, rule.indices, rule.weights);
  return rule;
}

enum class LpMode { ExactRecombination, ToleranceLP };

struct LPSettings {
  double eps_lp = 1e-8;
  Index n_max = 10;
  LpMode mode = LpMode::ExactRecombination;
  /// Constrained mode only: use eps_lp = max(eps_vio, eps_floor).
  bool adaptive_tolerance = false;
  double eps_floor = 1e-8;
  SimplexOptions simplex;

  void validate() const {
    if (!(eps_lp >= 0.0)) throw std::invalid_argument("eps_lp must be non-negative");
    if (n_max < 1) throw std::invalid_argument("n_max must be at least one");
  }
};

/// Tolerance LP over the measure's atoms:
///   max w^T [alpha . q]  s.t. |(w - w^N)^T phi_j| <= eps sqrt(lambda_j / r),
///   (w - w^N)^T q >= 0 (only with feasibility), 1^T w = 1, w >= 0.
/// The returned rule is a vertex, so its support is at most r + 2.
inline QuadratureRule solve_lp(const EmpiricalMeasure& measure, const Matrix& moments, const Vector& eigenvalues,
                               const Vector& reward_values, const std::optional<Vector>& feasibility_values,
                               const LPSettings& settings) {
  settings.validate();
  measure.validate();
  const Index N = measure.size();
  const Index r = moments.cols();
  if (moments.rows() != N || reward_values.size() != N || eigenvalues.size() < r)
    throw DimensionError("LP inputs have inconsistent sizes");
  if (feasibility_values && feasibility_values->size() != N) throw DimensionError("feasibility vector has wrong size");
  if (feasibility_values && settings.n_max < 3)
    throw std::invalid_argument("the constrained LP needs n_max >= 3");

  const Vector q = feasibility_values.value_or(Vector::Ones(N));
  const Vector& w0 = measure.weights;

  LinearProgram lp;
  lp.objective = reward_values.cwiseProduct(q);
  const Index rows_ub = 2 * r + (feasibility_values ? 1 : 0);
  lp.a_ub.resize(rows_ub, N);
  lp.b_ub.resize(rows_ub);
  Vector bound(r);
  for (Index j = 0; j < r; ++j) {
    // Rows are expressed in units of phi_j / sqrt(lambda_j).
    const double s = 1.0 / std::sqrt(eigenvalues(j));
    const Vector row = moments.col(j) * s;
    const double centre = row.dot(w0);
    bound(j) = settings.eps_lp / std::sqrt(static_cast<double>(std::max<Index>(r, 1)));
    lp.a_ub.row(2 * j) = row.transpose();
    lp.b_ub(2 * j) = centre + bound(j);
    lp.a_ub.row(2 * j + 1) = -row.transpose();
    lp.b_ub(2 * j + 1) = -centre + bound(j);
  }
  if (feasibility_values) {
    lp.a_ub.row(2 * r) = -q.transpose();
    lp.b_ub(2 * r) = -q.dot(w0);
  }
  lp.a_eq = Matrix::Ones(1, N);
  lp.b_eq = Vector::Ones(1);

  const LpSolution sol = solve_linear_program(lp, settings.simplex);
  if (sol.status != LpStatus::Optimal)
    throw std::runtime_error(std::string("LP solver failed: ") + to_string(sol.status) +
                             " (the parent weights are always feasible)");

  std::vector<Index> idx;
  std::vector<double> w;
  for (Index i = 0; i < N; ++i)
    if (sol.x(i) > 0.0) {
      idx.push_back(i);
      w.push_back(sol.x(i));
    }
  QuadratureRule rule = make_rule(measure, idx, Eigen::Map<Vector>(w.data(), static_cast<Index>(w.size())));
  auto& diag = rule.diagnostics;
  diag.solver = feasibility_values ? "constrained-lp" : "tolerance-lp";
  diag.rank_used = r;
  diag.eps_lp = settings.eps_lp;
  diag.baseline_objective = w0.dot(lp.objective);
  Vector full = Vector::Zero(N);
  for (std::size_t k = 0; k < rule.indices.size(); ++k) full(rule.indices[k]) += rule.weights(static_cast<Index>(k));
  diag.objective = full.dot(lp.objective);
  diag.moment_slack.resize(r);
  for (Index j = 0; j < r; ++j)
    diag.moment_slack(j) = bound(j) - std::abs((full - w0).dot(moments.col(j)) / std::sqrt(eigenvalues(j)));
  diag.feasibility_slack = (full - w0).dot(q);
  diag.moment_residual = detail::moment_residual(moments, w0, rule.indices, rule.weights);
  return rule;
}

// ---------------------------------------------------------------------------
// Orchestration

/// 1 - w^T q clamped to [0, 1].
inline double expected_violation(const EmpiricalMeasure& measure, const Vector& q) {
  if (q.size() != measure.size()) throw DimensionError("feasibility vector length must match the measure");
  return std::clamp(1.0 - measure.weights.dot(q), 0.0, 1.0);
}

/// Number of test functions a batch of size n uses.
inline Index test_function_count(Index n, bool constrained) {
  return std::max<Index>(0, constrained ? n - 2 : n - 1);
}

/// Reward, feasibility, test functions, then recombination or the LP.
/// `measure` and `basis` live in the GP's input space.
inline QuadratureRule select_batch(const GPPosterior& gp, const EmpiricalMeasure& measure, const NystromBasis& basis,
                                   const AcquisitionConfig& acquisition, const ConstraintModel* constraints,
                                   const LPSettings& settings) {
  settings.validate();
  const bool constrained = constraints != nullptr && !constraints->empty();
  const Index wanted = test_function_count(settings.n_max, constrained);
  const Index r = std::min(wanted, basis.rank);

  const Matrix phi = test_functions(basis, measure.points).leftCols(r);

  std::optional<Vector> q;
  double eps_vio = 0.0;
  if (constrained) {
    q = feasibility(*constraints, measure.points);
    eps_vio = expected_violation(measure, *q);
  }

  QuadratureRule rule;
  if (!constrained && settings.mode == LpMode::ExactRecombination) {
    rule = recombination(measure, phi, settings.n_max);
  } else {
    LPSettings s = settings;
    if (constrained && settings.adaptive_tolerance) s.eps_lp = std::max(eps_vio, settings.eps_floor);
    const Vector alpha = reward(gp, acquisition, measure.points);
    rule = solve_lp(measure, phi, basis.eigenvalues, alpha, q, s);
  }

  auto& diag = rule.diagnostics;
  diag.eps_vio = eps_vio;
  {
    Vector approx = Vector::Zero(measure.size());
    if (r > 0) approx = phi.array().square().matrix() * basis.eigenvalues.head(r).cwiseInverse();
    diag.eps_nys = (basis.kernel.diagonal(measure.points) - approx).cwiseMax(0.0).cwiseSqrt().maxCoeff();
  }
  diag.mmd2 = mmd_squared(rule, measure, CovarianceFunction::posterior(gp)).mmd2;
  return rule;
}

}  // namespace sober
