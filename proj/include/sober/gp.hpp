#pragma once

// Exact Gaussian process regression with an ARD squared-exponential kernel.
//
// The posterior holds a Cholesky factor of (K_XX + sigma^2 I). Objects are
// immutable after construction.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "core.hpp"

namespace sober {

/// RBF-ARD kernel: K(x, y) = s * exp(-0.5 * sum_d ((x_d - y_d) / l_d)^2).
struct Kernel {
  Vector lengthscales;
  double outputscale = 1.0;

  Kernel() = default;
  Kernel(Vector ls, double scale) : lengthscales(std::move(ls)), outputscale(scale) { validate(); }

  static Kernel isotropic(Index dim, double lengthscale, double scale) {
    return Kernel(Vector::Constant(dim, lengthscale), scale);
  }

  Index dim() const { return lengthscales.size(); }

  void validate() const {
    if (lengthscales.size() == 0) throw std::invalid_argument("kernel needs at least one lengthscale");
    for (Index i = 0; i < lengthscales.size(); ++i)
      if (!(lengthscales(i) > 0.0) || !std::isfinite(lengthscales(i)))
        throw std::invalid_argument("kernel lengthscales must be positive and finite");
    if (!(outputscale > 0.0) || !std::isfinite(outputscale))
      throw std::invalid_argument("kernel outputscale must be positive and finite");
  }

  double operator()(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const {
    const double r2 = ((x - y).array() / lengthscales.array()).square().sum();
    return outputscale * std::exp(-0.5 * r2);
  }

  Matrix scaled(const Matrix& A) const {
    check_dim(A);
    return A.array().rowwise() / lengthscales.transpose().array();
  }

  /// Gram matrix K(A, B).
  Matrix matrix(const Matrix& A, const Matrix& B) const {
    const Matrix As = scaled(A);
    const Matrix Bs = scaled(B);
    Matrix D = (-2.0 * As * Bs.transpose()).eval();
    D.colwise() += As.rowwise().squaredNorm();
    D.rowwise() += Bs.rowwise().squaredNorm().transpose();
    return (outputscale * (-0.5 * D.array().max(0.0)).exp()).matrix();
  }

  Matrix matrix(const Matrix& A) const {
    Matrix K = matrix(A, A);
    K.diagonal().setConstant(outputscale);
    return (0.5 * (K + K.transpose())).eval();
  }

  Vector diagonal(const Matrix& A) const {
    check_dim(A);
    return Vector::Constant(A.rows(), outputscale);
  }

  /// a^T K(A, B) b, evaluated in row blocks without storing K(A, B).
  double bilinear(const Matrix& A, const Vector& a, const Matrix& B, const Vector& b) const {
    constexpr Index block = 512;
    const Matrix As = scaled(A);
    const Matrix Bs = scaled(B);
    const Vector b_norm = Bs.rowwise().squaredNorm();
    double total = 0.0;
    for (Index start = 0; start < A.rows(); start += block) {
      const Index len = std::min(block, A.rows() - start);
      Matrix D = (-2.0 * As.middleRows(start, len) * Bs.transpose()).eval();
      D.colwise() += As.middleRows(start, len).rowwise().squaredNorm();
      D.rowwise() += b_norm.transpose();
      const Vector row_sums = (-0.5 * D.array().max(0.0)).exp().matrix() * b;
      total += a.segment(start, len).dot(row_sums);
    }
    return outputscale * total;
  }

  void check_dim(const Matrix& A) const {
    if (A.cols() != lengthscales.size())
      throw DimensionError("point dimension " + std::to_string(A.cols()) +
                           " does not match kernel dimension " + std::to_string(lengthscales.size()));
  }
};

struct Dataset {
  Matrix X;
  Vector Y;
  double noise_variance = 0.0;

  Dataset() = default;
  Dataset(Matrix x, Vector y, double noise) : X(std::move(x)), Y(std::move(y)), noise_variance(noise) {
    validate();
  }

  Index size() const { return X.rows(); }
  bool empty() const { return X.rows() == 0; }

  void validate() const {
    if (X.rows() != Y.size())
      throw DimensionError("dataset has " + std::to_string(X.rows()) + " inputs but " +
                           std::to_string(Y.size()) + " observations");
    if (!(noise_variance >= 0.0)) throw std::invalid_argument("noise variance must be non-negative");
  }

  void append(const Matrix& x, const Vector& y) {
    if (x.rows() != y.size()) throw DimensionError("appended inputs and observations differ in length");
    if (!empty() && x.cols() != X.cols()) throw DimensionError("appended inputs have the wrong dimension");
    Matrix nx(X.rows() + x.rows(), x.cols());
    if (!empty()) nx.topRows(X.rows()) = X;
    nx.bottomRows(x.rows()) = x;
    Vector ny(Y.size() + y.size());
    ny << Y, y;
    X = std::move(nx);
    Y = std::move(ny);
  }
};

namespace detail {

struct Factorisation {
  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;
};

/// Cholesky of a symmetric PSD matrix. The first attempt is unjittered; on
/// failure (or a vanishing pivot) jitter starts at 1e-8 * trace / t and grows
/// tenfold up to 1e-4 * trace / t.
inline Factorisation robust_cholesky(const Matrix& A) {
  const Index t = A.rows();
  Factorisation f;
  if (t == 0) return f;
  const double mean_diag = std::max(A.trace() / static_cast<double>(t), std::numeric_limits<double>::min());
  auto acceptable = [&](const Eigen::LLT<Matrix>& llt) {
    if (llt.info() != Eigen::Success) return false;
    const Vector piv = llt.matrixLLT().diagonal();
    return piv.allFinite() && piv.array().square().minCoeff() > 1e-12 * mean_diag;
  };
  f.llt.compute(A);
  if (acceptable(f.llt)) return f;
  for (double rel = 1e-8; rel <= 1e-4 * (1.0 + 1e-9); rel *= 10.0) {
    f.jitter = rel * mean_diag;
    Matrix J = A;
    J.diagonal().array() += f.jitter;
    f.llt.compute(J);
    if (acceptable(f.llt)) return f;
  }
  throw FactorisationError("Gram matrix is not positive definite after maximum jitter", t);
}

}  // namespace detail

/// Conditioned GP. Evaluates m_t and C_t of the latent function.
class GPPosterior {
 public:
  GPPosterior(Kernel kernel, Dataset data, double prior_mean)
      : kernel_(std::move(kernel)), data_(std::move(data)), prior_mean_(prior_mean) {
    kernel_.validate();
    data_.validate();
    if (!data_.empty()) {
      kernel_.check_dim(data_.X);
      Matrix G = kernel_.matrix(data_.X);
      G.diagonal().array() += data_.noise_variance;
      factor_ = detail::robust_cholesky(G);
      alpha_ = factor_.llt.solve((data_.Y.array() - prior_mean_).matrix());
    }
  }

  const Kernel& kernel() const { return kernel_; }
  const Dataset& data() const { return data_; }
  double prior_mean() const { return prior_mean_; }
  double outputscale() const { return kernel_.outputscale; }
  double jitter() const { return factor_.jitter; }
  Index dim() const { return kernel_.dim(); }

  Vector mean(const Matrix& A) const {
    kernel_.check_dim(A);
    Vector m = Vector::Constant(A.rows(), prior_mean_);
    if (!data_.empty()) m += kernel_.matrix(A, data_.X) * alpha_;
    return m;
  }

  /// C_t(A, B).
  Matrix covariance(const Matrix& A, const Matrix& B) const {
    Matrix C = kernel_.matrix(A, B);
    if (!data_.empty()) C.noalias() -= whitened(A).transpose() * whitened(B);
    return C;
  }

  /// C_t(A, A), symmetrised with the diagonal clamped.
  Matrix covariance(const Matrix& A) const {
    Matrix C = kernel_.matrix(A);
    if (!data_.empty()) {
      const Matrix V = whitened(A);
      C.noalias() -= V.transpose() * V;
    }
    C = (0.5 * (C + C.transpose())).eval();
    for (Index i = 0; i < C.rows(); ++i) C(i, i) = clamp_variance(C(i, i));
    return C;
  }

  Vector variance(const Matrix& A) const {
    Vector v = kernel_.diagonal(A);
    if (!data_.empty()) v -= whitened(A).colwise().squaredNorm().transpose();
    for (Index i = 0; i < v.size(); ++i) v(i) = clamp_variance(v(i));
    return v;
  }

  std::pair<Vector, Matrix> mean_cov(const Matrix& A, const Matrix& B) const {
    if (A.rows() == 0 || B.rows() == 0) throw std::invalid_argument("point sets must be non-empty");
    if (&A == &B) return {mean(A), covariance(A)};
    return {mean(A), covariance(A, B)};
  }

  /// a^T C_t(A, B) b without materialising C_t(A, B).
  double bilinear(const Matrix& A, const Vector& a, const Matrix& B, const Vector& b) const {
    double value = kernel_.bilinear(A, a, B, b);
    if (!data_.empty()) value -= (whitened(A) * a).dot(whitened(B) * b);
    return value;
  }

  /// L^{-1} K(X, A), the whitened cross-covariance.
  Matrix whitened(const Matrix& A) const {
    Matrix V = kernel_.matrix(data_.X, A);
    factor_.llt.matrixL().solveInPlace(V);
    return V;
  }

 private:
  double clamp_variance(double v) const {
    if (v >= 0.0) return v;
    if (v >= -1e-8 * kernel_.outputscale) return 0.0;
    throw std::runtime_error("posterior variance " + std::to_string(v) + " is negative beyond tolerance");
  }

  Kernel kernel_;
  Dataset data_;
  double prior_mean_ = 0.0;
  detail::Factorisation factor_;
  Vector alpha_;
};

inline GPPosterior fit_posterior(const Dataset& data, const Kernel& kernel, double prior_mean = 0.0) {
  return GPPosterior(kernel, data, prior_mean);
}

inline std::pair<Vector, Matrix> posterior_mean_cov(const GPPosterior& gp, const Matrix& A, const Matrix& B) {
  return gp.mean_cov(A, B);
}

// ---------------------------------------------------------------------------
// Type-II maximum likelihood

struct LmlResult {
  double value = -std::numeric_limits<double>::infinity();
  /// d/d log(l_1..l_d), d/d log(s), d/d log(sigma^2).
  Vector gradient;
};

/// Log marginal likelihood and its gradient with respect to log-hyperparameters.
inline LmlResult log_marginal_likelihood(const Dataset& data, const Kernel& kernel, double prior_mean,
                                         bool with_gradient = false) {
  const Index t = data.size();
  const Index d = kernel.dim();
  Matrix Kf = kernel.matrix(data.X);
  Matrix G = Kf;
  G.diagonal().array() += data.noise_variance;
  const auto f = detail::robust_cholesky(G);
  const Vector r = (data.Y.array() - prior_mean).matrix();
  const Vector alpha = f.llt.solve(r);
  LmlResult out;
  const double log_det = 2.0 * f.llt.matrixLLT().diagonal().array().log().sum();
  out.value = -0.5 * r.dot(alpha) - 0.5 * log_det - 0.5 * static_cast<double>(t) * std::log(2.0 * std::numbers::pi);
  if (!with_gradient) return out;

  Matrix W = f.llt.solve(Matrix::Identity(t, t));
  W = alpha * alpha.transpose() - W;
  out.gradient = Vector::Zero(d + 2);
  const Matrix WK = W.cwiseProduct(Kf);
  for (Index k = 0; k < d; ++k) {
    const double inv_l2 = 1.0 / (kernel.lengthscales(k) * kernel.lengthscales(k));
    double acc = 0.0;
    for (Index j = 0; j < t; ++j)
      for (Index i = 0; i < t; ++i) {
        const double diff = data.X(i, k) - data.X(j, k);
        acc += WK(i, j) * diff * diff;
      }
    out.gradient(k) = 0.5 * acc * inv_l2;
  }
  out.gradient(d) = 0.5 * WK.sum();
  out.gradient(d + 1) = 0.5 * data.noise_variance * W.trace();
  return out;
}

struct HyperparameterOptions {
  int restarts = 8;
  int max_iterations = 60;
  bool fit_noise = false;
  /// Per-dimension domain width used for the lengthscale box; data range if empty.
  Vector domain_width;
  double min_noise = 1e-8;
  std::uint64_t seed = 0;
};

struct HyperparameterFit {
  Kernel kernel;
  double noise_variance = 0.0;
  double log_marginal_likelihood = 0.0;
  double initial_log_marginal_likelihood = 0.0;
  /// Set when the data cannot identify hyperparameters (all inputs identical).
  bool degenerate = false;
};

namespace detail {

struct LogParamBox {
  Vector lower;
  Vector upper;
  Vector clamp(const Vector& p) const { return p.cwiseMax(lower).cwiseMin(upper); }
};

}  // namespace detail

/// Multi-start projected gradient ascent on log-hyperparameters. The result's
/// likelihood is never below that of `init`.
inline HyperparameterFit optimize_hyperparameters(const Dataset& data, const Kernel& init,
                                                  const HyperparameterOptions& options = {}) {
  data.validate();
  init.validate();
  if (data.size() < 2) throw std::invalid_argument("hyperparameter fitting needs at least two points");
  init.check_dim(data.X);
  const Index d = init.dim();
  const double prior_mean = data.Y.mean();

  HyperparameterFit best;
  best.kernel = init;
  best.noise_variance = data.noise_variance;

  const Vector lo = data.X.colwise().minCoeff();
  const Vector hi = data.X.colwise().maxCoeff();
  if ((hi - lo).maxCoeff() <= 0.0) {
    best.degenerate = true;
    best.log_marginal_likelihood = best.initial_log_marginal_likelihood =
        log_marginal_likelihood(data, init, prior_mean).value;
    return best;
  }
  Vector width = options.domain_width.size() == d ? options.domain_width : Vector(hi - lo);
  for (Index k = 0; k < d; ++k)
    if (!(width(k) > 0.0)) width(k) = 1.0;

  const double y_var = std::max((data.Y.array() - prior_mean).square().mean(), 1e-12);
  const Index np = d + 2;
  detail::LogParamBox box{Vector(np), Vector(np)};
  for (Index k = 0; k < d; ++k) {
    box.lower(k) = std::log(1e-3 * width(k));
    box.upper(k) = std::log(1e3 * width(k));
  }
  box.lower(d) = std::log(1e-6 * y_var);
  box.upper(d) = std::log(1e6 * y_var);
  box.lower(d + 1) = std::log(std::max(options.min_noise, 1e-300));
  box.upper(d + 1) = std::log(std::max(y_var, options.min_noise));

  auto unpack = [&](const Vector& p, Kernel& k, Dataset& dd) {
    k.lengthscales = p.head(d).array().exp();
    k.outputscale = std::exp(p(d));
    if (options.fit_noise) dd.noise_variance = std::exp(p(d + 1));
  };
  Dataset work = data;
  auto evaluate = [&](const Vector& p, bool grad) -> LmlResult {
    Kernel k = init;
    unpack(p, k, work);
    try {
      LmlResult r = log_marginal_likelihood(work, k, prior_mean, grad);
      if (!std::isfinite(r.value)) return LmlResult{};
      if (grad && !options.fit_noise) r.gradient(d + 1) = 0.0;
      return r;
    } catch (const FactorisationError&) {
      return LmlResult{};
    }
  };

  best.initial_log_marginal_likelihood = evaluate(
      [&] {
        Vector p(np);
        p.head(d) = init.lengthscales.array().log();
        p(d) = std::log(init.outputscale);
        p(d + 1) = std::log(std::max(data.noise_variance, options.min_noise));
        return p;
      }(),
      false).value;
  // The unclamped initial value defines the monotone-improvement baseline.
  best.log_marginal_likelihood = best.initial_log_marginal_likelihood;

  Rng rng(options.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int restarts = std::max(1, options.restarts);
  for (int start = 0; start < restarts; ++start) {
    Vector p(np);
    if (start == 0) {
      p.head(d) = init.lengthscales.array().log();
      p(d) = std::log(init.outputscale);
    } else {
      for (Index k = 0; k < d; ++k) p(k) = std::log(width(k) * std::exp(std::log(0.02) + unif(rng) * std::log(100.0)));
      p(d) = std::log(y_var) + (2.0 * unif(rng) - 1.0);
    }
    p(d + 1) = std::log(std::max(data.noise_variance, options.min_noise));
    if (options.fit_noise && start > 0) p(d + 1) = std::log(y_var) + std::log(1e-6) * unif(rng);
    p = box.clamp(p);

    LmlResult cur = evaluate(p, true);
    if (!std::isfinite(cur.value)) continue;
    double step = 0.1;
    for (int it = 0; it < options.max_iterations; ++it) {
      const Vector g = cur.gradient;
      // Projected gradient with Armijo backtracking; step adapts between iterations.
      bool moved = false;
      for (int bt = 0; bt < 30; ++bt) {
        const Vector trial = box.clamp(p + step * g);
        const double gain = g.dot(trial - p);
        if ((trial - p).norm() < 1e-10) break;
        LmlResult next = evaluate(trial, true);
        if (std::isfinite(next.value) && next.value >= cur.value + 1e-4 * gain) {
          p = trial;
          cur = std::move(next);
          moved = true;
          step *= 2.0;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
      if (cur.gradient.cwiseProduct((box.clamp(p + cur.gradient) - p)).norm() < 1e-8) break;
    }
    if (cur.value > best.log_marginal_likelihood) {
      best.log_marginal_likelihood = cur.value;
      unpack(p, best.kernel, work);
      best.noise_variance = options.fit_noise ? std::exp(p(d + 1)) : data.noise_variance;
    }
  }
  return best;
}

}  // namespace sober
