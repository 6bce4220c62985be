#pragma once

// Dense two-phase primal simplex for
//
//   maximise c^T x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0.
//
// Returns basic (vertex) solutions, so at most (number of rows) entries of x
// are non-zero. Pricing is Dantzig's rule; after a run of degenerate pivots
// it falls back to Bland's rule, which cannot cycle.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"

namespace sober {

struct LinearProgram {
  Vector objective;
  Matrix a_ub;
  Vector b_ub;
  Matrix a_eq;
  Vector b_eq;
};

enum class LpStatus { Optimal, Infeasible, Unbounded, IterationLimit };

inline const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Infeasible: return "infeasible";
    case LpStatus::Unbounded: return "unbounded";
    case LpStatus::IterationLimit: return "iteration limit";
  }
  return "unknown";
}

struct LpSolution {
  LpStatus status = LpStatus::Infeasible;
  Vector x;
  double objective = 0.0;
  int iterations = 0;
};

struct SimplexOptions {
  double pivot_tolerance = 1e-9;
  double cost_tolerance = 1e-10;
  double feasibility_tolerance = 1e-9;
  int max_iterations = 200000;
  int degenerate_run_before_bland = 50;
};

namespace detail {

class Tableau {
 public:
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Tableau(Index rows, Index cols) : T_(RowMatrix::Zero(rows + 1, cols + 1)), basis_(static_cast<std::size_t>(rows)) {}

  Index rows() const { return T_.rows() - 1; }
  Index cols() const { return T_.cols() - 1; }
  double& a(Index i, Index j) { return T_(i, j); }
  double& rhs(Index i) { return T_(i, cols()); }
  double& cost(Index j) { return T_(rows(), j); }
  double& value() { return T_(rows(), cols()); }
  std::vector<Index>& basis() { return basis_; }

  void pivot(Index r, Index c) {
    const double p = T_(r, c);
    T_.row(r) /= p;
    for (Index i = 0; i <= rows(); ++i) {
      if (i == r) continue;
      const double f = T_(i, c);
      if (f != 0.0) T_.row(i) -= f * T_.row(r);
    }
    basis_[static_cast<std::size_t>(r)] = c;
  }

  /// Sets the reduced-cost row for maximising `costs` (indexed by column)
  /// relative to the current basis.
  void set_objective(const Vector& costs) {
    T_.row(rows()).setZero();
    for (Index j = 0; j < costs.size(); ++j) T_(rows(), j) = costs(j);
    for (Index i = 0; i < rows(); ++i) {
      const double cb = costs(basis_[static_cast<std::size_t>(i)]);
      if (cb != 0.0) T_.row(rows()) -= cb * T_.row(i);
    }
  }

  /// Runs primal simplex on columns flagged in `allowed`.
  LpStatus run(const std::vector<bool>& allowed, const SimplexOptions& opt, int& iterations) {
    int degenerate_run = 0;
    while (iterations < opt.max_iterations) {
      const bool bland = degenerate_run >= opt.degenerate_run_before_bland;
      Index enter = -1;
      double best = opt.cost_tolerance;
      for (Index j = 0; j < cols(); ++j) {
        if (!allowed[static_cast<std::size_t>(j)]) continue;
        const double rc = T_(rows(), j);
        if (rc > best) {
          enter = j;
          if (bland) break;
          best = rc;
        }
      }
      if (enter < 0) return LpStatus::Optimal;

      Index leave = -1;
      double min_ratio = std::numeric_limits<double>::infinity();
      for (Index i = 0; i < rows(); ++i) {
        const double aij = T_(i, enter);
        if (aij <= opt.pivot_tolerance) continue;
        const double ratio = std::max(T_(i, cols()), 0.0) / aij;
        if (ratio < min_ratio - 1e-12) {
          min_ratio = ratio;
          leave = i;
        } else if (ratio <= min_ratio + 1e-12 && leave >= 0) {
          // Ties: Bland picks the lowest basic index, otherwise the larger pivot.
          const bool better = bland ? basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)]
                                    : aij > T_(leave, enter);
          if (better) leave = i;
        }
      }
      if (leave < 0) return LpStatus::Unbounded;
      degenerate_run = min_ratio <= 1e-14 ? degenerate_run + 1 : 0;
      pivot(leave, enter);
      ++iterations;
    }
    return LpStatus::IterationLimit;
  }

 private:
  RowMatrix T_;
  std::vector<Index> basis_;
};

}  // namespace detail

inline LpSolution solve_linear_program(const LinearProgram& lp, const SimplexOptions& opt = {}) {
  const Index n = lp.objective.size();
  const Index m_ub = lp.a_ub.rows();
  const Index m_eq = lp.a_eq.rows();
  if ((m_ub && lp.a_ub.cols() != n) || (m_eq && lp.a_eq.cols() != n) || lp.b_ub.size() != m_ub ||
      lp.b_eq.size() != m_eq)
    throw DimensionError("linear program blocks have inconsistent shapes");
  const Index m = m_ub + m_eq;

  // Row equilibration and sign normalisation; every right-hand side becomes >= 0.
  Matrix A(m, n);
  Vector b(m);
  std::vector<bool> needs_artificial(static_cast<std::size_t>(m), false);
  Vector slack_sign = Vector::Zero(m);
  for (Index i = 0; i < m; ++i) {
    const bool ub = i < m_ub;
    Vector row = ub ? Vector(lp.a_ub.row(i).transpose()) : Vector(lp.a_eq.row(i - m_ub).transpose());
    double rhs = ub ? lp.b_ub(i) : lp.b_eq(i - m_ub);
    const double s = std::max(row.cwiseAbs().maxCoeff(), 1e-300);
    row /= s;
    rhs /= s;
    double sign = 1.0;
    if (rhs < 0.0) sign = -1.0;
    A.row(i) = sign * row.transpose();
    b(i) = sign * rhs;
    if (ub) {
      slack_sign(i) = sign;  // +1: slack, -1: surplus
      needs_artificial[static_cast<std::size_t>(i)] = sign < 0.0;
    } else {
      needs_artificial[static_cast<std::size_t>(i)] = true;
    }
  }
  Index n_art = 0;
  for (bool f : needs_artificial) n_art += f ? 1 : 0;

  const Index slack0 = n;
  const Index art0 = n + m_ub;
  const Index cols = n + m_ub + n_art;
  detail::Tableau tab(m, cols);
  Index next_art = art0;
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) tab.a(i, j) = A(i, j);
    tab.rhs(i) = b(i);
    if (i < m_ub) tab.a(i, slack0 + i) = slack_sign(i);
    if (needs_artificial[static_cast<std::size_t>(i)]) {
      tab.a(i, next_art) = 1.0;
      tab.basis()[static_cast<std::size_t>(i)] = next_art++;
    } else {
      tab.basis()[static_cast<std::size_t>(i)] = slack0 + i;
    }
  }

  LpSolution sol;
  std::vector<bool> allowed(static_cast<std::size_t>(cols), true);
  if (n_art > 0) {
    Vector phase1 = Vector::Zero(cols);
    phase1.tail(n_art).setConstant(-1.0);
    tab.set_objective(phase1);
    const LpStatus s1 = tab.run(allowed, opt, sol.iterations);
    if (s1 == LpStatus::IterationLimit) {
      sol.status = s1;
      return sol;
    }
    double infeasibility = 0.0;
    for (Index i = 0; i < m; ++i)
      if (tab.basis()[static_cast<std::size_t>(i)] >= art0) infeasibility += std::abs(tab.rhs(i));
    if (infeasibility > opt.feasibility_tolerance * std::max<Index>(1, m)) {
      sol.status = LpStatus::Infeasible;
      return sol;
    }
    // Drive zero-level artificials out of the basis where possible.
    for (Index i = 0; i < m; ++i) {
      if (tab.basis()[static_cast<std::size_t>(i)] < art0) continue;
      Index col = -1;
      double best = opt.pivot_tolerance;
      for (Index j = 0; j < art0; ++j)
        if (std::abs(tab.a(i, j)) > best) {
          best = std::abs(tab.a(i, j));
          col = j;
        }
      if (col >= 0) tab.pivot(i, col);
    }
    for (Index j = art0; j < cols; ++j) allowed[static_cast<std::size_t>(j)] = false;
  }

  Vector phase2 = Vector::Zero(cols);
  phase2.head(n) = lp.objective;
  tab.set_objective(phase2);
  sol.status = tab.run(allowed, opt, sol.iterations);
  sol.x = Vector::Zero(n);
  for (Index i = 0; i < m; ++i) {
    const Index j = tab.basis()[static_cast<std::size_t>(i)];
    if (j < n) sol.x(j) = std::max(tab.rhs(i), 0.0);
  }
  sol.objective = lp.objective.dot(sol.x);
  return sol;
}

}  // namespace sober
