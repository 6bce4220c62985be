#pragma once

// Domain priors, weighted maximum-likelihood refitting and sequential
// importance resampling onto an empirical measure.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "core.hpp"
#include "gp.hpp"

namespace sober {

/// Weighted point cloud (w^N, X^N).
struct EmpiricalMeasure {
  Matrix points;
  Vector weights;

  EmpiricalMeasure() = default;
  EmpiricalMeasure(Matrix x, Vector w) : points(std::move(x)), weights(std::move(w)) { validate(); }

  static EmpiricalMeasure uniform(Matrix x) {
    const Index n = x.rows();
    return EmpiricalMeasure(std::move(x), Vector::Constant(n, 1.0 / static_cast<double>(n)));
  }

  Index size() const { return points.rows(); }
  Index dim() const { return points.cols(); }

  void validate() const {
    if (points.rows() < 1) throw std::invalid_argument("empirical measure needs at least one point");
    if (points.rows() != weights.size()) throw DimensionError("measure points and weights differ in length");
    if ((weights.array() < 0.0).any() || !weights.allFinite())
      throw std::invalid_argument("measure weights must be non-negative and finite");
    if (std::abs(weights.sum() - 1.0) > 1e-10) throw std::invalid_argument("measure weights must sum to one");
  }
};

struct ContinuousUniform {
  Vector lower;
  Vector upper;
};

struct Gaussian {
  Vector mean;
  Matrix covariance;
};

/// Gaussian mixture. When `lower`/`upper` are set, samples are restricted to
/// that box by rejection (100 attempts) and then clamped.
struct GaussianMixture {
  Vector weights;
  std::vector<Vector> means;
  std::vector<Matrix> covariances;
  Vector lower;
  Vector upper;

  Index components() const { return weights.size(); }
  bool bounded() const { return lower.size() > 0; }

  /// A K-component family placeholder over a box, ready to be refitted.
  static GaussianMixture family(Index components, const Vector& lo, const Vector& hi) {
    GaussianMixture g;
    g.weights = Vector::Constant(components, 1.0 / static_cast<double>(components));
    const Vector centre = 0.5 * (lo + hi);
    const Vector half = 0.5 * (hi - lo);
    for (Index k = 0; k < components; ++k) {
      g.means.push_back(centre);
      g.covariances.push_back(half.array().square().matrix().asDiagonal());
    }
    g.lower = lo;
    g.upper = hi;
    return g;
  }
};

struct Bernoulli {
  Vector p;
};

/// Integer-coded categorical variables, one probability table per dimension.
struct Categorical {
  std::vector<Vector> tables;
};

class DomainPrior;

/// Independent product of priors over consecutive column blocks.
struct MixedProduct {
  std::vector<DomainPrior> parts;
};

class DomainPrior {
 public:
  using Variant = std::variant<ContinuousUniform, Gaussian, GaussianMixture, Bernoulli, Categorical, MixedProduct>;

  DomainPrior() : value_(ContinuousUniform{Vector::Zero(1), Vector::Ones(1)}) {}
  template <typename T, typename = std::enable_if_t<!std::is_same_v<std::decay_t<T>, DomainPrior>>>
  DomainPrior(T&& v) : value_(std::forward<T>(v)) {}

  const Variant& value() const { return value_; }
  Variant& value() { return value_; }

  template <typename T>
  const T* get_if() const {
    return std::get_if<T>(&value_);
  }

  std::string family_name() const {
    return std::visit(
        [](const auto& p) -> std::string {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, ContinuousUniform>) return "uniform";
          if constexpr (std::is_same_v<T, Gaussian>) return "gaussian";
          if constexpr (std::is_same_v<T, GaussianMixture>) return "gmm";
          if constexpr (std::is_same_v<T, Bernoulli>) return "bernoulli";
          if constexpr (std::is_same_v<T, Categorical>) return "categorical";
          if constexpr (std::is_same_v<T, MixedProduct>) return "mixed";
        },
        value_);
  }

 private:
  Variant value_;
};

// ---------------------------------------------------------------------------
// Shape and validation

inline Index dim(const DomainPrior& prior) {
  return std::visit(
      [](const auto& p) -> Index {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ContinuousUniform>) return p.lower.size();
        if constexpr (std::is_same_v<T, Gaussian>) return p.mean.size();
        if constexpr (std::is_same_v<T, GaussianMixture>) return p.means.empty() ? 0 : p.means.front().size();
        if constexpr (std::is_same_v<T, Bernoulli>) return p.p.size();
        if constexpr (std::is_same_v<T, Categorical>) return static_cast<Index>(p.tables.size());
        if constexpr (std::is_same_v<T, MixedProduct>) {
          Index total = 0;
          for (const auto& part : p.parts) total += dim(part);
          return total;
        }
      },
      prior.value());
}

namespace detail {

inline void check_simplex(const Vector& v, const char* what) {
  if (v.size() == 0 || (v.array() < 0.0).any() || std::abs(v.sum() - 1.0) > 1e-12)
    throw std::invalid_argument(std::string(what) + " must be a probability simplex");
}

inline void check_psd(const Matrix& S, const char* what) {
  if (S.rows() != S.cols()) throw std::invalid_argument(std::string(what) + " must be square");
  if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + S.cwiseAbs().maxCoeff()))
    throw std::invalid_argument(std::string(what) + " must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, es.eigenvalues().maxCoeff()))
    throw std::invalid_argument(std::string(what) + " must be positive semi-definite");
}

}  // namespace detail

inline void validate(const DomainPrior& prior) {
  std::visit(
      [](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ContinuousUniform>) {
          if (p.lower.size() == 0 || p.lower.size() != p.upper.size())
            throw std::invalid_argument("uniform bounds must be non-empty and of equal length");
          if (!(p.lower.array() < p.upper.array()).all())
            throw std::invalid_argument("uniform lower bounds must be below upper bounds");
        } else if constexpr (std::is_same_v<T, Gaussian>) {
          if (p.covariance.rows() != p.mean.size()) throw DimensionError("gaussian covariance has wrong size");
          detail::check_psd(p.covariance, "gaussian covariance");
        } else if constexpr (std::is_same_v<T, GaussianMixture>) {
          detail::check_simplex(p.weights, "mixture weights");
          if (static_cast<Index>(p.means.size()) != p.weights.size() ||
              p.covariances.size() != p.means.size())
            throw std::invalid_argument("mixture component arrays differ in length");
          for (std::size_t k = 0; k < p.means.size(); ++k) {
            if (p.means[k].size() != p.means.front().size() || p.covariances[k].rows() != p.means[k].size())
              throw DimensionError("mixture component has wrong dimension");
            detail::check_psd(p.covariances[k], "mixture covariance");
          }
          if (p.bounded() && !(p.lower.array() < p.upper.array()).all())
            throw std::invalid_argument("mixture bounds must satisfy lower < upper");
        } else if constexpr (std::is_same_v<T, Bernoulli>) {
          if (p.p.size() == 0 || (p.p.array() < 0.0).any() || (p.p.array() > 1.0).any())
            throw std::invalid_argument("bernoulli probabilities must lie in [0, 1]");
        } else if constexpr (std::is_same_v<T, Categorical>) {
          if (p.tables.empty()) throw std::invalid_argument("categorical prior needs at least one table");
          for (const auto& t : p.tables) detail::check_simplex(t, "categorical table");
        } else if constexpr (std::is_same_v<T, MixedProduct>) {
          if (p.parts.empty()) throw std::invalid_argument("mixed product needs at least one part");
          for (const auto& part : p.parts) validate(part);
        }
      },
      prior.value());
}

// ---------------------------------------------------------------------------
// Log density

namespace detail {

/// Log-density of N(mean, cov) for every row of X, via a Cholesky factor.
inline Vector gaussian_log_density(const Matrix& X, const Vector& mean, const Matrix& cov) {
  const Index d = mean.size();
  const auto f = robust_cholesky(cov);
  Matrix Z = (X.rowwise() - mean.transpose()).transpose();
  f.llt.matrixL().solveInPlace(Z);
  const double log_det = 2.0 * f.llt.matrixLLT().diagonal().array().log().sum();
  const double c = -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det);
  return (c - 0.5 * Z.colwise().squaredNorm().array()).matrix().transpose();
}

inline double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

inline Matrix mixture_component_log_densities(const GaussianMixture& g, const Matrix& X) {
  Matrix L(X.rows(), g.components());
  for (Index k = 0; k < g.components(); ++k) {
    const double lw = g.weights(k) > 0.0 ? std::log(g.weights(k)) : -std::numeric_limits<double>::infinity();
    L.col(k) = gaussian_log_density(X, g.means[static_cast<std::size_t>(k)], g.covariances[static_cast<std::size_t>(k)]).array() + lw;
  }
  return L;
}

}  // namespace detail

/// Log-density (continuous) or log-mass (discrete) of every row of X.
inline Vector log_density(const DomainPrior& prior, const Matrix& X) {
  if (X.cols() != dim(prior)) throw DimensionError("point dimension does not match prior dimension");
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  return std::visit(
      [&](const auto& p) -> Vector {
        using T = std::decay_t<decltype(p)>;
        Vector out(X.rows());
        if constexpr (std::is_same_v<T, ContinuousUniform>) {
          const double lv = -(p.upper - p.lower).array().log().sum();
          for (Index i = 0; i < X.rows(); ++i) {
            const bool inside = (X.row(i).transpose().array() >= p.lower.array()).all() &&
                                (X.row(i).transpose().array() <= p.upper.array()).all();
            out(i) = inside ? lv : neg_inf;
          }
        } else if constexpr (std::is_same_v<T, Gaussian>) {
          out = detail::gaussian_log_density(X, p.mean, p.covariance);
        } else if constexpr (std::is_same_v<T, GaussianMixture>) {
          const Matrix L = detail::mixture_component_log_densities(p, X);
          for (Index i = 0; i < X.rows(); ++i) out(i) = detail::log_sum_exp(L.row(i));
          if (p.bounded())
            for (Index i = 0; i < X.rows(); ++i)
              if ((X.row(i).transpose().array() < p.lower.array()).any() ||
                  (X.row(i).transpose().array() > p.upper.array()).any())
                out(i) = neg_inf;
        } else if constexpr (std::is_same_v<T, Bernoulli>) {
          for (Index i = 0; i < X.rows(); ++i) {
            double acc = 0.0;
            for (Index k = 0; k < X.cols() && std::isfinite(acc); ++k) {
              const double x = X(i, k);
              if (x == 1.0) acc += std::log(p.p(k));
              else if (x == 0.0) acc += std::log1p(-p.p(k));
              else acc = neg_inf;
            }
            out(i) = acc;
          }
        } else if constexpr (std::is_same_v<T, Categorical>) {
          for (Index i = 0; i < X.rows(); ++i) {
            double acc = 0.0;
            for (Index k = 0; k < X.cols() && std::isfinite(acc); ++k) {
              const Vector& table = p.tables[static_cast<std::size_t>(k)];
              const double x = X(i, k);
              const auto code = static_cast<Index>(std::llround(x));
              if (static_cast<double>(code) != x || code < 0 || code >= table.size()) acc = neg_inf;
              else acc += std::log(table(code));
            }
            out(i) = acc;
          }
        } else if constexpr (std::is_same_v<T, MixedProduct>) {
          out.setZero();
          Index offset = 0;
          for (const auto& part : p.parts) {
            const Index w = dim(part);
            out += log_density(part, Matrix(X.middleCols(offset, w)));
            offset += w;
          }
        }
        return out;
      },
      prior.value());
}

inline double log_density(const DomainPrior& prior, const Vector& x) {
  return log_density(prior, Matrix(x.transpose()))(0);
}

// ---------------------------------------------------------------------------
// Sampling

namespace detail {

inline Matrix sample_gaussian(const Vector& mean, const Matrix& cov, Index n, Rng& rng) {
  const auto f = robust_cholesky(cov);
  const Matrix L = f.llt.matrixL();
  Matrix out(n, mean.size());
  for (Index i = 0; i < n; ++i) out.row(i) = (mean + L * standard_normal_vector(mean.size(), rng)).transpose();
  return out;
}

inline Index sample_index(const Vector& probs, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng) * probs.sum();
  double acc = 0.0;
  for (Index k = 0; k < probs.size(); ++k) {
    acc += probs(k);
    if (r < acc) return k;
  }
  for (Index k = probs.size() - 1; k >= 0; --k)
    if (probs(k) > 0.0) return k;
  return 0;
}

}  // namespace detail

inline Matrix sample(const DomainPrior& prior, Index count, Rng& rng) {
  if (count < 1) throw std::invalid_argument("sample count must be at least one");
  validate(prior);
  const Index d = dim(prior);
  return std::visit(
      [&](const auto& p) -> Matrix {
        using T = std::decay_t<decltype(p)>;
        Matrix out(count, d);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        if constexpr (std::is_same_v<T, ContinuousUniform>) {
          for (Index i = 0; i < count; ++i)
            for (Index k = 0; k < d; ++k) out(i, k) = p.lower(k) + (p.upper(k) - p.lower(k)) * u(rng);
        } else if constexpr (std::is_same_v<T, Gaussian>) {
          out = detail::sample_gaussian(p.mean, p.covariance, count, rng);
        } else if constexpr (std::is_same_v<T, GaussianMixture>) {
          std::vector<Matrix> chol;
          for (const auto& c : p.covariances) chol.emplace_back(detail::robust_cholesky(c).llt.matrixL());
          for (Index i = 0; i < count; ++i) {
            Vector x;
            for (int attempt = 0; attempt < 100; ++attempt) {
              const auto k = static_cast<std::size_t>(detail::sample_index(p.weights, rng));
              x = p.means[k] + chol[k] * standard_normal_vector(d, rng);
              if (!p.bounded() || ((x.array() >= p.lower.array()).all() && (x.array() <= p.upper.array()).all()))
                break;
            }
            if (p.bounded()) x = x.cwiseMax(p.lower).cwiseMin(p.upper);
            out.row(i) = x.transpose();
          }
        } else if constexpr (std::is_same_v<T, Bernoulli>) {
          for (Index i = 0; i < count; ++i)
            for (Index k = 0; k < d; ++k) out(i, k) = u(rng) < p.p(k) ? 1.0 : 0.0;
        } else if constexpr (std::is_same_v<T, Categorical>) {
          for (Index i = 0; i < count; ++i)
            for (Index k = 0; k < d; ++k)
              out(i, k) = static_cast<double>(detail::sample_index(p.tables[static_cast<std::size_t>(k)], rng));
        } else if constexpr (std::is_same_v<T, MixedProduct>) {
          Index offset = 0;
          for (const auto& part : p.parts) {
            const Index w = dim(part);
            out.middleCols(offset, w) = sample(part, count, rng);
            offset += w;
          }
        }
        return out;
      },
      prior.value());
}

inline Matrix sample(const DomainPrior& prior, Index count, std::uint64_t seed) {
  Rng rng(seed);
  return sample(prior, count, rng);
}

// ---------------------------------------------------------------------------
// Kernel embedding and continuous bounds

/// Maps raw points into the space the kernel sees: categorical codes are
/// scaled to [0, 1], everything else passes through.
inline Matrix embed_for_kernel(const DomainPrior& prior, const Matrix& X) {
  Matrix out = X;
  std::function<void(const DomainPrior&, Index)> walk = [&](const DomainPrior& p, Index offset) {
    if (const auto* c = p.get_if<Categorical>()) {
      for (std::size_t k = 0; k < c->tables.size(); ++k) {
        const double arity = static_cast<double>(c->tables[k].size());
        const auto col = offset + static_cast<Index>(k);
        if (arity > 1.0) out.col(col) = X.col(col) / (arity - 1.0);
      }
    } else if (const auto* m = p.get_if<MixedProduct>()) {
      for (const auto& part : m->parts) {
        walk(part, offset);
        offset += dim(part);
      }
    }
  };
  walk(prior, 0);
  return out;
}

/// Per-dimension widths of the prior's natural range (used for lengthscale
/// boxes and covariance floors). Discrete dimensions report 1.
inline Vector domain_width(const DomainPrior& prior) {
  return std::visit(
      [](const auto& p) -> Vector {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ContinuousUniform>) return p.upper - p.lower;
        if constexpr (std::is_same_v<T, Gaussian>) return 6.0 * p.covariance.diagonal().cwiseSqrt();
        if constexpr (std::is_same_v<T, GaussianMixture>) {
          if (p.bounded()) return p.upper - p.lower;
          Vector w = Vector::Zero(p.means.front().size());
          for (std::size_t k = 0; k < p.means.size(); ++k)
            w = w.cwiseMax(6.0 * p.covariances[k].diagonal().cwiseSqrt());
          return w;
        }
        if constexpr (std::is_same_v<T, Bernoulli>) return Vector::Ones(p.p.size());
        if constexpr (std::is_same_v<T, Categorical>) return Vector::Ones(static_cast<Index>(p.tables.size()));
        if constexpr (std::is_same_v<T, MixedProduct>) {
          Vector out(dim(DomainPrior(p)));
          Index offset = 0;
          for (const auto& part : p.parts) {
            const Index w = dim(part);
            out.segment(offset, w) = domain_width(part);
            offset += w;
          }
          return out;
        }
      },
      prior.value());
}

/// Replaces every continuous uniform block by a bounded K-component mixture
/// over the same box, giving SIR a proposal family that can concentrate.
inline DomainPrior mixture_proposal_family(const DomainPrior& prior, Index components) {
  if (const auto* u = prior.get_if<ContinuousUniform>())
    return GaussianMixture::family(components, u->lower, u->upper);
  if (const auto* m = prior.get_if<MixedProduct>()) {
    MixedProduct out;
    for (const auto& part : m->parts) out.parts.push_back(mixture_proposal_family(part, components));
    return out;
  }
  return prior;
}

// ---------------------------------------------------------------------------
// Weighted maximum likelihood

struct MleOptions {
  int em_iterations = 50;
  double em_tolerance = 1e-6;
  /// Mixture covariance floor, relative to the squared domain width.
  double covariance_floor = 1e-6;
  std::uint64_t seed = 0;
};

namespace detail {

inline GaussianMixture weighted_em(const GaussianMixture& family, const Matrix& X, const Vector& w,
                                   const MleOptions& opt) {
  const Index d = X.cols();
  // Only points carrying weight influence the fit.
  std::vector<Index> keep;
  const double w_max = w.maxCoeff();
  for (Index i = 0; i < w.size(); ++i)
    if (w(i) > 1e-14 * w_max) keep.push_back(i);
  const Matrix P = select_rows(X, keep);
  Vector pw(static_cast<Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) pw(static_cast<Index>(i)) = w(keep[i]);
  pw /= pw.sum();
  const Index n = P.rows();

  Vector width = family.bounded() ? Vector(family.upper - family.lower)
                                  : Vector(X.colwise().maxCoeff() - X.colwise().minCoeff());
  for (Index k = 0; k < d; ++k)
    if (!(width(k) > 0.0)) width(k) = 1.0;
  const Matrix floor = (opt.covariance_floor * width.array().square()).matrix().asDiagonal();

  const Index K = std::min<Index>(std::max<Index>(family.components(), 1), n);
  GaussianMixture g;
  g.lower = family.lower;
  g.upper = family.upper;

  // Weighted k-means++ seeding.
  Rng rng(opt.seed);
  std::vector<Index> centres{detail::sample_index(pw, rng)};
  Vector dist2 = (P.rowwise() - P.row(centres[0])).rowwise().squaredNorm();
  while (static_cast<Index>(centres.size()) < K) {
    const Vector score = pw.cwiseProduct(dist2);
    if (score.sum() <= 0.0) break;
    centres.push_back(detail::sample_index(score, rng));
    dist2 = dist2.cwiseMin((P.rowwise() - P.row(centres.back())).rowwise().squaredNorm());
  }
  const Index k_eff = static_cast<Index>(centres.size());
  Matrix resp = Matrix::Zero(n, k_eff);
  {
    Matrix D(n, k_eff);
    for (Index k = 0; k < k_eff; ++k) D.col(k) = (P.rowwise() - P.row(centres[static_cast<std::size_t>(k)])).rowwise().squaredNorm();
    for (Index i = 0; i < n; ++i) {
      Index arg;
      D.row(i).minCoeff(&arg);
      resp(i, arg) = 1.0;
    }
  }

  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < opt.em_iterations; ++iter) {
    // M step
    g.weights.resize(0);
    g.means.clear();
    g.covariances.clear();
    std::vector<double> mass;
    for (Index k = 0; k < resp.cols(); ++k) {
      const Vector rw = resp.col(k).cwiseProduct(pw);
      const double nk = rw.sum();
      if (nk <= 1e-12) continue;
      const Vector mu = (P.transpose() * rw) / nk;
      const Matrix C = P.rowwise() - mu.transpose();
      Matrix S = (C.transpose() * rw.asDiagonal() * C) / nk;
      S = 0.5 * (S + S.transpose()) + floor;
      mass.push_back(nk);
      g.means.push_back(mu);
      g.covariances.push_back(S);
    }
    g.weights = Eigen::Map<Vector>(mass.data(), static_cast<Index>(mass.size()));
    g.weights /= g.weights.sum();

    // E step
    const Matrix L = mixture_component_log_densities(g, P);
    Vector row_lse(n);
    for (Index i = 0; i < n; ++i) row_lse(i) = log_sum_exp(L.row(i));
    const double ll = pw.dot(row_lse);
    resp = (L.colwise() - row_lse).array().exp();
    if (std::isfinite(prev_ll) && std::abs(ll - prev_ll) <= opt.em_tolerance * std::max(1.0, std::abs(ll))) break;
    prev_ll = ll;
  }
  return g;
}

}  // namespace detail

/// Refits the parameters of `family` to the weighted points; the family
/// (and, for mixtures, the component count and bounds) is preserved.
inline DomainPrior weighted_mle_fit(const DomainPrior& family, const Matrix& X, const Vector& w,
                                    const MleOptions& opt = {}) {
  if (X.rows() != w.size()) throw DimensionError("points and weights differ in length");
  if (X.cols() != dim(family)) throw DimensionError("point dimension does not match family dimension");
  detail::check_simplex(Vector(w / std::max(w.sum(), 1e-300)), "weights");
  if (std::abs(w.sum() - 1.0) > 1e-10) throw std::invalid_argument("weights must sum to one");
  return std::visit(
      [&](const auto& p) -> DomainPrior {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ContinuousUniform>) {
          Vector lo = Vector::Constant(X.cols(), std::numeric_limits<double>::infinity());
          Vector hi = -lo;
          for (Index i = 0; i < X.rows(); ++i)
            if (w(i) > 0.0) {
              lo = lo.cwiseMin(X.row(i).transpose());
              hi = hi.cwiseMax(X.row(i).transpose());
            }
          const Vector centre = 0.5 * (lo + hi);
          Vector half = 0.5 * 1.01 * (hi - lo);
          const Vector min_half = 0.5e-6 * (p.upper - p.lower);
          half = half.cwiseMax(min_half);
          // The refit never leaves the family's own box.
          Vector new_lo = (centre - half).cwiseMax(p.lower);
          Vector new_hi = (centre + half).cwiseMin(p.upper);
          for (Index k = 0; k < new_lo.size(); ++k)
            if (!(new_hi(k) > new_lo(k))) {
              new_lo(k) = std::max(p.lower(k), centre(k) - half(k));
              new_hi(k) = std::min(p.upper(k), new_lo(k) + 2.0 * half(k));
            }
          return ContinuousUniform{new_lo, new_hi};
        } else if constexpr (std::is_same_v<T, Gaussian>) {
          const Vector mu = X.transpose() * w;
          const Matrix C = X.rowwise() - mu.transpose();
          Matrix S = C.transpose() * w.asDiagonal() * C;
          return Gaussian{mu, 0.5 * (S + S.transpose())};
        } else if constexpr (std::is_same_v<T, GaussianMixture>) {
          if (X.rows() < p.components()) throw std::invalid_argument("mixture fit needs at least K points");
          return detail::weighted_em(p, X, w, opt);
        } else if constexpr (std::is_same_v<T, Bernoulli>) {
          Vector q = (X.transpose() * w).cwiseMax(0.0).cwiseMin(1.0);
          return Bernoulli{q};
        } else if constexpr (std::is_same_v<T, Categorical>) {
          Categorical out;
          for (std::size_t k = 0; k < p.tables.size(); ++k) {
            Vector t = Vector::Zero(p.tables[k].size());
            for (Index i = 0; i < X.rows(); ++i) {
              const auto code = static_cast<Index>(std::llround(X(i, static_cast<Index>(k))));
              if (code < 0 || code >= t.size()) throw std::invalid_argument("categorical code out of range");
              t(code) += w(i);
            }
            out.tables.push_back(t / t.sum());
          }
          return out;
        } else if constexpr (std::is_same_v<T, MixedProduct>) {
          MixedProduct out;
          Index offset = 0;
          for (std::size_t k = 0; k < p.parts.size(); ++k) {
            const Index width = dim(p.parts[k]);
            MleOptions sub = opt;
            sub.seed = derive_seed(opt.seed, k);
            out.parts.push_back(weighted_mle_fit(p.parts[k], X.middleCols(offset, width), w, sub));
            offset += width;
          }
          return out;
        }
      },
      family.value());
}

// ---------------------------------------------------------------------------
// Sequential importance resampling

/// Batch log-density evaluator, possibly unnormalised.
using LogDensityFn = std::function<Vector(const Matrix&)>;

class SirError : public std::runtime_error {
 public:
  explicit SirError(const std::string& what) : std::runtime_error(what + " (effective sample size 0)") {}
  double effective_sample_size() const { return 0.0; }
};

struct SirOptions {
  /// Family refitted in the MLE step; defaults to the prior's own family.
  std::optional<DomainPrior> proposal_family;
  MleOptions mle;
  /// For purely discrete priors, collapse repeated atoms into one atom
  /// weighted by its target mass.
  bool merge_discrete_atoms = true;
};

/// True when every coordinate is Bernoulli or categorical.
inline bool is_discrete(const DomainPrior& prior) {
  if (prior.get_if<Bernoulli>() || prior.get_if<Categorical>()) return true;
  if (const auto* m = prior.get_if<MixedProduct>())
    return std::all_of(m->parts.begin(), m->parts.end(), [](const DomainPrior& p) { return is_discrete(p); });
  return false;
}

namespace detail {

/// Distinct rows in first-appearance order.
inline Matrix unique_rows(const Matrix& X) {
  std::map<std::vector<double>, Index> seen;
  std::vector<Index> keep;
  for (Index i = 0; i < X.rows(); ++i) {
    std::vector<double> key(static_cast<std::size_t>(X.cols()));
    for (Index k = 0; k < X.cols(); ++k) key[static_cast<std::size_t>(k)] = X(i, k);
    if (seen.emplace(std::move(key), i).second) keep.push_back(i);
  }
  return select_rows(X, keep);
}

}  // namespace detail

struct SirResult {
  EmpiricalMeasure measure;
  DomainPrior refitted;
  double initial_ess = 0.0;
  double final_ess = 0.0;
};

/// Sample from the prior, importance-weight toward the target, refit a
/// proposal by weighted MLE, resample from it and reweight.
inline SirResult sir(const DomainPrior& prior, const LogDensityFn& target, Index count, std::uint64_t seed,
                     const SirOptions& options = {}) {
  Rng rng(seed);
  const Matrix X0 = sample(prior, count, rng);
  Vector w0;
  if (!normalise_log_weights(target(X0) - log_density(prior, X0), w0))
    throw SirError("all initial importance weights are zero or undefined");

  MleOptions mle = options.mle;
  mle.seed = derive_seed(seed, 1);
  DomainPrior refitted = weighted_mle_fit(options.proposal_family.value_or(prior), X0, w0, mle);

  Matrix X = sample(refitted, count, rng);
  Vector w;
  if (options.merge_discrete_atoms && is_discrete(prior)) {
    X = detail::unique_rows(X);
    if (!normalise_log_weights(target(X), w)) throw SirError("all resampled atoms have zero target mass");
    SirResult out{EmpiricalMeasure(std::move(X), std::move(w)), std::move(refitted), effective_sample_size(w0), 0.0};
    out.final_ess = effective_sample_size(out.measure.weights);
    return out;
  }
  if (!normalise_log_weights(target(X) - log_density(refitted, X), w))
    throw SirError("all resampled importance weights are zero or undefined");
  SirResult out{EmpiricalMeasure(std::move(X), std::move(w)), std::move(refitted), effective_sample_size(w0), 0.0};
  out.final_ess = effective_sample_size(out.measure.weights);
  return out;
}

}  // namespace sober
