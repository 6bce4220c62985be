#pragma once

// Synthetic objectives in the maximisation convention, with constrained
// variants. Constraints are feasible where g(x) >= 0.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "../core.hpp"
#include "../domain.hpp"

namespace sober::bench {

using Evaluator = std::function<Vector(const Matrix&)>;

struct TestFunction {
  std::string name;
  std::string description;
  DomainPrior prior;
  Evaluator evaluate;
  std::vector<Evaluator> constraints;
  std::optional<Vector> x_star;
  std::optional<double> y_star;
  Index default_batch = 10;

  Index dim() const { return sober::dim(prior); }
};

namespace detail {

inline void check_points(const Matrix& X, Index d, const char* name) {
  if (X.cols() != d)
    throw DimensionError(std::string(name) + " expects " + std::to_string(d) + " columns, got " +
                         std::to_string(X.cols()));
}

inline void check_binary(const Matrix& X, Index first, Index count, const char* name) {
  for (Index i = 0; i < X.rows(); ++i)
    for (Index k = first; k < first + count; ++k)
      if (X(i, k) != 0.0 && X(i, k) != 1.0) throw std::invalid_argument(std::string(name) + ": binary value out of domain");
}

inline Index check_code(double v, Index arity, const char* name) {
  const auto code = static_cast<Index>(std::llround(v));
  if (static_cast<double>(code) != v || code < 0 || code >= arity)
    throw std::invalid_argument(std::string(name) + ": categorical code out of domain");
  return code;
}

inline double ackley_raw(const Eigen::Ref<const Vector>& x) {
  const double n = static_cast<double>(x.size());
  const double a = 20.0, b = 0.2, c = 2.0 * std::numbers::pi;
  const double s1 = x.squaredNorm() / n;
  const double s2 = (c * x.array()).cos().sum() / n;
  return -a * std::exp(-b * std::sqrt(s1)) - std::exp(s2) + a + std::numbers::e;
}

/// Classical Branin coordinates from the box [-3, 2]^2.
inline std::pair<double, double> branin_coords(double x1, double x2) {
  return {-5.0 + 3.0 * (x1 + 3.0), 3.0 * (x2 + 3.0)};
}

inline double branin_raw(double u1, double u2) {
  const double pi = std::numbers::pi;
  const double a = 1.0, b = 5.1 / (4.0 * pi * pi), c = 5.0 / pi, r = 6.0, s = 10.0, t = 1.0 / (8.0 * pi);
  const double q = u2 - b * u1 * u1 + c * u1 - r;
  return a * q * q + s * (1.0 - t) * std::cos(u1) + s;
}

inline double hartmann6_raw(const Eigen::Ref<const Vector>& x) {
  static const double alpha[4] = {1.0, 1.2, 3.0, 3.2};
  static const double A[4][6] = {{10, 3, 17, 3.5, 1.7, 8},
                                 {0.05, 10, 17, 0.1, 8, 14},
                                 {3, 3.5, 1.7, 10, 17, 8},
                                 {17, 8, 0.05, 10, 0.1, 14}};
  static const double P[4][6] = {{1312, 1696, 5569, 124, 8283, 5886},
                                 {2329, 4135, 8307, 3736, 1004, 9991},
                                 {2348, 1451, 3522, 2883, 3047, 6650},
                                 {4047, 8828, 8732, 5743, 1091, 381}};
  double out = 0.0;
  for (int i = 0; i < 4; ++i) {
    double inner = 0.0;
    for (int j = 0; j < 6; ++j) {
      const double diff = x(j) - 1e-4 * P[i][j];
      inner += A[i][j] * diff * diff;
    }
    out += alpha[i] * std::exp(-inner);
  }
  return out;
}

inline double shekel_raw(const Eigen::Ref<const Vector>& x) {
  static const double beta[10] = {1, 2, 2, 4, 4, 6, 3, 7, 5, 5};
  static const double C[4][10] = {{4, 1, 8, 6, 3, 2, 5, 8, 6, 7},
                                  {4, 1, 8, 6, 7, 9, 3, 1, 2, 3.6},
                                  {4, 1, 8, 6, 3, 2, 5, 8, 6, 7},
                                  {4, 1, 8, 6, 7, 9, 3, 1, 2, 3.6}};
  double out = 0.0;
  for (int i = 0; i < 10; ++i) {
    double s = 0.1 * beta[i];
    for (int j = 0; j < 4; ++j) {
      const double diff = x(j) - C[j][i];
      s += diff * diff;
    }
    out += 1.0 / s;
  }
  return out;
}

inline double rosenbrock_raw(const Eigen::Ref<const Vector>& z) {
  double out = 0.0;
  for (Index i = 0; i + 1 < z.size(); ++i) {
    const double a = z(i + 1) - z(i) * z(i);
    const double b = 1.0 - z(i);
    out += 100.0 * a * a + b * b;
  }
  return out;
}

inline Evaluator rowwise(Index d, const char* name, std::function<double(const Eigen::Ref<const Vector>&)> f) {
  return [d, name, f = std::move(f)](const Matrix& X) -> Vector {
    check_points(X, d, name);
    Vector out(X.rows());
    for (Index i = 0; i < X.rows(); ++i) out(i) = f(X.row(i).transpose());
    return out;
  };
}

inline DomainPrior uniform_box(Index d, double lo, double hi) {
  return ContinuousUniform{Vector::Constant(d, lo), Vector::Constant(d, hi)};
}

inline const double kRosenbrockLevels[4] = {-4.0, 1.0, 6.0, 11.0};

}  // namespace detail

// ---------------------------------------------------------------------------
// Objectives

inline TestFunction branin() {
  TestFunction f;
  f.name = "branin";
  f.description = "Branin-Hoo rescaled onto [-3, 2]^2, negated";
  f.prior = detail::uniform_box(2, -3.0, 2.0);
  f.evaluate = detail::rowwise(2, "branin", [](const Eigen::Ref<const Vector>& x) {
    const auto [u1, u2] = detail::branin_coords(x(0), x(1));
    return -detail::branin_raw(u1, u2);
  });
  const double pi = std::numbers::pi;
  f.x_star = Vector(2);
  *f.x_star << (pi + 5.0) / 3.0 - 3.0, 2.275 / 3.0 - 3.0;
  f.y_star = -0.39788735772973816;
  f.default_batch = 30;
  return f;
}

inline TestFunction ackley(Index d = 2) {
  TestFunction f;
  f.name = d == 2 ? "ackley2" : "ackley" + std::to_string(d);
  f.description = "Ackley on [-1, 1]^" + std::to_string(d) + ", negated";
  f.prior = detail::uniform_box(d, -1.0, 1.0);
  f.evaluate = detail::rowwise(d, "ackley", [](const Eigen::Ref<const Vector>& x) { return -detail::ackley_raw(x); });
  f.x_star = Vector::Zero(d);
  f.y_star = 0.0;
  f.default_batch = 20;
  return f;
}

/// 3 continuous coordinates in [-1, 1] followed by 20 binary coordinates.
inline TestFunction ackley_mixed() {
  TestFunction f;
  f.name = "ackley-mixed";
  f.description = "Ackley with 3 continuous and 20 binary variables, negated";
  f.prior = MixedProduct{{detail::uniform_box(3, -1.0, 1.0), Bernoulli{Vector::Constant(20, 0.5)}}};
  f.evaluate = [](const Matrix& X) -> Vector {
    detail::check_points(X, 23, "ackley-mixed");
    detail::check_binary(X, 3, 20, "ackley-mixed");
    Vector out(X.rows());
    for (Index i = 0; i < X.rows(); ++i) out(i) = -detail::ackley_raw(X.row(i).transpose());
    return out;
  };
  f.x_star = Vector::Zero(23);
  f.y_star = 0.0;
  f.default_batch = 200;
  return f;
}

/// 1 continuous coordinate in [-4, 11] and 6 categorical codes mapping to {-4, 1, 6, 11}.
inline TestFunction rosenbrock_mixed() {
  TestFunction f;
  f.name = "rosenbrock-mixed";
  f.description = "Rosenbrock with 1 continuous and 6 four-level categorical variables, negated";
  Categorical cat;
  for (int k = 0; k < 6; ++k) cat.tables.push_back(Vector::Constant(4, 0.25));
  f.prior = MixedProduct{{ContinuousUniform{Vector::Constant(1, -4.0), Vector::Constant(1, 11.0)}, cat}};
  f.evaluate = [](const Matrix& X) -> Vector {
    detail::check_points(X, 7, "rosenbrock-mixed");
    Vector out(X.rows());
    Vector z(7);
    for (Index i = 0; i < X.rows(); ++i) {
      z(0) = X(i, 0);
      for (Index k = 1; k < 7; ++k) z(k) = detail::kRosenbrockLevels[detail::check_code(X(i, k), 4, "rosenbrock-mixed")];
      out(i) = -detail::rosenbrock_raw(z);
    }
    return out;
  };
  f.x_star = Vector(7);
  *f.x_star << 1.0, 1, 1, 1, 1, 1, 1;
  f.y_star = 0.0;
  f.default_batch = 100;
  return f;
}

inline TestFunction hartmann6() {
  TestFunction f;
  f.name = "hartmann6";
  f.description = "Hartmann 6-d on [0, 1]^6";
  f.prior = detail::uniform_box(6, 0.0, 1.0);
  f.evaluate = detail::rowwise(6, "hartmann6", [](const Eigen::Ref<const Vector>& x) { return detail::hartmann6_raw(x); });
  f.x_star = Vector(6);
  *f.x_star << 0.20168950909365746, 0.15001069354111374, 0.4768739729250998, 0.2753324275220782, 0.3116516172395686,
      0.6573005345536702;
  f.y_star = 3.3223680114155147;
  f.default_batch = 100;
  return f;
}

inline TestFunction shekel4() {
  TestFunction f;
  f.name = "shekel4";
  f.description = "Shekel (m = 10) on [0, 10]^4";
  f.prior = detail::uniform_box(4, 0.0, 10.0);
  f.evaluate = detail::rowwise(4, "shekel4", [](const Eigen::Ref<const Vector>& x) { return detail::shekel_raw(x); });
  f.x_star = Vector(4);
  *f.x_star << 4.000746866658956, 3.9995094808675886, 4.000746866997999, 3.9995094822423836;
  f.y_star = 10.53644315348353;
  f.default_batch = 100;
  return f;
}

// ---------------------------------------------------------------------------
// Constrained variants (two constraints each)

inline TestFunction branin_constrained() {
  TestFunction f = branin();
  f.name = "branin-constrained";
  f.description += "; feasible inside a disc and above a line";
  f.constraints.push_back(detail::rowwise(2, "branin-constrained", [](const Eigen::Ref<const Vector>& x) {
    const auto [u1, u2] = detail::branin_coords(x(0), x(1));
    return 50.0 - ((u1 - 2.5) * (u1 - 2.5) + (u2 - 7.5) * (u2 - 7.5));
  }));
  f.constraints.push_back(detail::rowwise(2, "branin-constrained", [](const Eigen::Ref<const Vector>& x) {
    const auto [u1, u2] = detail::branin_coords(x(0), x(1));
    return u1 + u2 - 3.0;
  }));
  f.default_batch = 20;
  return f;
}

inline TestFunction ackley_mixed_constrained() {
  TestFunction f = ackley_mixed();
  f.name = "ackley-mixed-constrained";
  f.description += "; continuous part in the unit ball, at most 10 active bits";
  f.constraints.push_back([](const Matrix& X) -> Vector {
    detail::check_points(X, 23, "ackley-mixed-constrained");
    return (1.0 - X.leftCols(3).rowwise().squaredNorm().array()).matrix();
  });
  f.constraints.push_back([](const Matrix& X) -> Vector {
    detail::check_points(X, 23, "ackley-mixed-constrained");
    return (10.0 - X.rightCols(20).rowwise().sum().array()).matrix();
  });
  return f;
}

inline TestFunction hartmann6_constrained() {
  TestFunction f = hartmann6();
  f.name = "hartmann6-constrained";
  f.description += "; norm at most 1.2, coordinate sum at most 2.5";
  f.constraints.push_back([](const Matrix& X) -> Vector {
    detail::check_points(X, 6, "hartmann6-constrained");
    return (1.2 - X.rowwise().norm().array()).matrix();
  });
  f.constraints.push_back([](const Matrix& X) -> Vector {
    detail::check_points(X, 6, "hartmann6-constrained");
    return (2.5 - X.rowwise().sum().array()).matrix();
  });
  f.default_batch = 5;
  return f;
}

// ---------------------------------------------------------------------------
// Registry

inline std::vector<TestFunction> all_functions() {
  return {branin(),           ackley(2),   ackley_mixed(), rosenbrock_mixed(), hartmann6(), shekel4(),
          branin_constrained(), ackley_mixed_constrained(), hartmann6_constrained()};
}

inline TestFunction make_function(const std::string& name) {
  for (auto& f : all_functions())
    if (f.name == name) return f;
  throw std::invalid_argument("unknown test function: " + name);
}

inline Vector eval_testfn(const std::string& name, const Matrix& points) { return make_function(name).evaluate(points); }

}  // namespace sober::bench
