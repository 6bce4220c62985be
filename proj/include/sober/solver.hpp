#pragma once

// Outer optimisation loop: fit the GP, build the target measure, select a
// batch by kernel quadrature, query the oracles, append and repeat.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"
#include "covariance.hpp"
#include "domain.hpp"
#include "gp.hpp"
#include "lifting.hpp"
#include "nystrom.hpp"
#include "quadrature.hpp"

namespace sober {

// ---------------------------------------------------------------------------
// Estimates and metrics

struct IntegralEstimate {
  double mean = 0.0;
  double variance = 0.0;
};

/// Mean (w^n)^T m(X^n) and variance mmd^2(rule, measure, C).
inline IntegralEstimate integral_estimates(const GPPosterior& gp, const EmpiricalMeasure& measure,
                                           const QuadratureRule& rule) {
  IntegralEstimate out;
  out.mean = rule.weights.dot(gp.mean(rule.points));
  out.variance = mmd_squared(rule, measure, CovarianceFunction::posterior(gp)).mmd2;
  return out;
}

/// Posterior variance of the integral against the measure itself, w^T C w.
inline double integral_variance(const GPPosterior& gp, const EmpiricalMeasure& measure) {
  return std::max(gp.bilinear(measure.points, measure.weights, measure.points, measure.weights), 0.0);
}

struct MeasureStats {
  Vector barycentre;
  double mv = 0.0;
  std::optional<double> md;
};

inline MeasureStats measure_stats(const EmpiricalMeasure& measure, const std::optional<Vector>& x_star = std::nullopt) {
  measure.validate();
  MeasureStats s;
  s.barycentre = measure.points.transpose() * measure.weights;
  const Matrix centred = measure.points.rowwise() - s.barycentre.transpose();
  s.mv = measure.weights.dot(centred.rowwise().squaredNorm());
  if (x_star) {
    if (x_star->size() != measure.dim()) throw DimensionError("x_star dimension does not match the measure");
    s.md = (s.barycentre - *x_star).norm();
  }
  return s;
}

// ---------------------------------------------------------------------------
// Configuration

enum class SolverMode { BO_LFI, BO_TS, AL, BQ };
enum class Policy { Sober, Random, BatchThompson };
enum class EpsPolicy { Fixed, Adaptive };

inline const char* to_string(SolverMode m) {
  switch (m) {
    case SolverMode::BO_LFI: return "bo-lfi";
    case SolverMode::BO_TS: return "bo-ts";
    case SolverMode::AL: return "al";
    case SolverMode::BQ: return "bq";
  }
  return "unknown";
}

inline const char* to_string(Policy p) {
  switch (p) {
    case Policy::Sober: return "sober";
    case Policy::Random: return "random";
    case Policy::BatchThompson: return "batch-ts";
  }
  return "unknown";
}

struct SolverConfig {
  Index N = 20000;
  Index M = 500;
  Index n_max = 10;
  LpMode lp_mode = LpMode::ExactRecombination;
  EpsPolicy eps_policy = EpsPolicy::Fixed;
  double eps_lp = 1e-8;
  double delta = 0.0;
  int max_iterations = 10;
  AcquisitionConfig acquisition;
  SolverMode mode = SolverMode::BO_LFI;
  Policy policy = Policy::Sober;
  std::uint64_t seed = 0;

  /// Initial design size; 0 means max(10, d + 2).
  Index initial_design = 0;
  int hyper_restarts = 4;
  int hyper_iterations = 60;
  /// Observation noise on the standardised scale.
  double noise_variance = 1e-6;
  /// When set, hyperparameters are not refitted and outputs are not standardised.
  std::optional<Kernel> fixed_kernel;
  double fixed_prior_mean = 0.0;
  /// Relative multiplicative noise on the fitted lengthscales and outputscale.
  double hyper_noise = 0.0;
  Index proposal_components = 10;
  Index ts_candidates = 4096;
  Index ts_draws = 1000;
  NystromOptions nystrom;

  void validate() const {
    if (n_max < 1) throw std::invalid_argument("n_max must be at least one");
    if (N < n_max) throw std::invalid_argument("N must be at least n_max");
    if (M < 1 || M > N) throw std::invalid_argument("M must lie in [1, N]");
    if (!(eps_lp >= 0.0)) throw std::invalid_argument("eps_lp must be non-negative");
    if (!(delta >= 0.0)) throw std::invalid_argument("delta must be non-negative");
    if (max_iterations < 1) throw std::invalid_argument("max_iterations must be at least one");
    if (!(hyper_noise >= 0.0 && hyper_noise < 2.0)) throw std::invalid_argument("hyper_noise must lie in [0, 2)");
    acquisition.validate();
  }
};

using Oracle = std::function<Vector(const Matrix&)>;

struct Problem {
  Oracle objective;
  std::vector<Oracle> constraints;
  DomainPrior prior;
  std::optional<Vector> x_star;
  std::optional<double> y_star;
  std::optional<Matrix> pool;
  /// Supplied initial inputs; drawn from the prior when absent.
  std::optional<Matrix> initial_X;
};

struct IterationRecord {
  int iteration = 0;
  Matrix X;
  Vector w;
  Vector Y;
  Matrix G;
  Index batch_size = 0;
  double eps_lp = 0.0;
  double eps_vio = 0.0;
  double mmd2 = std::numeric_limits<double>::quiet_NaN();
  double z_mean = std::numeric_limits<double>::quiet_NaN();
  double z_var = std::numeric_limits<double>::quiet_NaN();
  double mv = std::numeric_limits<double>::quiet_NaN();
  double md = std::numeric_limits<double>::quiet_NaN();
  double simple_regret = std::numeric_limits<double>::quiet_NaN();
  double best_observed = -std::numeric_limits<double>::infinity();
  double violation_fraction = 0.0;
  double wall_ms = 0.0;
};

struct History {
  std::vector<IterationRecord> records;
  Matrix X;
  Vector Y;
  Matrix G;
  Index initial_size = 0;
  double best_observed = -std::numeric_limits<double>::infinity();
  Vector best_x;
  bool aborted = false;
  std::string error;
};

// ---------------------------------------------------------------------------
// Loop internals

namespace detail {

struct Standardiser {
  double shift = 0.0;
  double scale = 1.0;

  static Standardiser fit(const Vector& y, bool centre) {
    Standardiser s;
    if (y.size() == 0) return s;
    const double mean = y.mean();
    const double var = (y.array() - mean).square().mean();
    s.shift = centre ? mean : 0.0;
    s.scale = var > 1e-24 ? std::sqrt(var) : 1.0;
    return s;
  }
  Vector apply(const Vector& y) const { return (y.array() - shift) / scale; }
};

inline bool feasible_row(const Matrix& G, Index i) { return G.cols() == 0 || (G.row(i).array() >= 0.0).all(); }

inline Vector call_oracle(const Oracle& f, const Matrix& X, const char* what) {
  Vector y = f(X);
  if (y.size() != X.rows()) throw DimensionError(std::string(what) + " oracle returned the wrong number of values");
  if (!y.allFinite()) throw std::runtime_error(std::string(what) + " oracle returned non-finite values");
  return y;
}

/// Fits a GP on kernel-space inputs Z. Returns the posterior on standardised outputs.
struct FittedModel {
  GPPosterior gp;
  Standardiser standardiser;
  Kernel kernel;
};

inline FittedModel fit_model(const Matrix& Z, const Vector& y, const SolverConfig& cfg, const Vector& width,
                             const Kernel& warm, bool centre, std::uint64_t seed) {
  if (cfg.fixed_kernel) {
    Dataset data{Z, y, cfg.noise_variance};
    return FittedModel{fit_posterior(data, *cfg.fixed_kernel, cfg.fixed_prior_mean), Standardiser{}, *cfg.fixed_kernel};
  }
  const Standardiser st = Standardiser::fit(y, centre);
  Dataset data{Z, st.apply(y), cfg.noise_variance};
  HyperparameterOptions ho;
  ho.restarts = cfg.hyper_restarts;
  ho.max_iterations = cfg.hyper_iterations;
  ho.domain_width = width;
  ho.seed = seed;
  Kernel k = optimize_hyperparameters(data, warm, ho).kernel;
  if (cfg.hyper_noise > 0.0) {
    Rng rng(derive_seed(seed, 77));
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (Index j = 0; j < k.lengthscales.size(); ++j) k.lengthscales(j) *= 1.0 + cfg.hyper_noise * u(rng);
    k.outputscale *= 1.0 + cfg.hyper_noise * u(rng);
  }
  return FittedModel{fit_posterior(data, k, data.Y.mean()), st, k};
}

/// One joint posterior draw per batch slot over the candidates; argmax
/// duplicates are redrawn up to 4n times.
inline std::vector<Index> batch_thompson(const GPPosterior& gp, const Matrix& candidates_z, Index n,
                                         std::uint64_t seed) {
  const Vector mean = gp.mean(candidates_z);
  const Matrix L = detail::robust_cholesky(gp.covariance(candidates_z)).llt.matrixL();
  Rng rng(seed);
  std::set<Index> seen;
  std::vector<Index> chosen;
  for (Index draw = 0; draw < 4 * n && static_cast<Index>(chosen.size()) < n; ++draw) {
    const Vector f = mean + L * standard_normal_vector(mean.size(), rng);
    Index arg;
    f.maxCoeff(&arg);
    if (seen.insert(arg).second) chosen.push_back(arg);
  }
  return chosen;
}

}  // namespace detail

/// Runs the loop until MV <= delta after a batch or the iteration cap.
inline History run(const Problem& problem, const SolverConfig& config) {
  config.validate();
  validate(problem.prior);
  if (!problem.objective) throw std::invalid_argument("problem needs an objective oracle");
  const Index d = dim(problem.prior);
  const bool constrained = !problem.constraints.empty();
  const Index L = static_cast<Index>(problem.constraints.size());
  // Widths in kernel space (categorical columns already span [0, 1]).
  Vector kwidth = domain_width(problem.prior);
  for (Index k = 0; k < d; ++k)
    if (!(kwidth(k) > 0.0)) kwidth(k) = 1.0;

  History h;
  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
  };

  // Initial design, shared across policies for the same seed.
  std::vector<bool> pool_used;
  if (problem.pool) pool_used.assign(static_cast<std::size_t>(problem.pool->rows()), false);
  Matrix X0;
  if (problem.initial_X) {
    X0 = *problem.initial_X;
  } else {
    const Index n0 = config.initial_design > 0 ? config.initial_design : std::max<Index>(10, d + 2);
    if (problem.pool) {
      Rng rng(derive_seed(config.seed, 0));
      std::vector<Index> order(static_cast<std::size_t>(problem.pool->rows()));
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(static_cast<std::size_t>(std::min<Index>(n0, problem.pool->rows())));
      X0 = select_rows(*problem.pool, order);
      for (Index i : order) pool_used[static_cast<std::size_t>(i)] = true;
    } else {
      X0 = sample(problem.prior, n0, derive_seed(config.seed, 0));
    }
  }
  try {
    h.X = X0;
    h.Y = detail::call_oracle(problem.objective, X0, "objective");
    h.G.resize(X0.rows(), L);
    for (Index l = 0; l < L; ++l) h.G.col(l) = detail::call_oracle(problem.constraints[static_cast<std::size_t>(l)], X0, "constraint");
  } catch (const std::exception& e) {
    h.aborted = true;
    h.error = e.what();
    return h;
  }
  h.initial_size = X0.rows();
  auto update_best = [&] {
    for (Index i = 0; i < h.X.rows(); ++i)
      if (detail::feasible_row(h.G, i) && h.Y(i) > h.best_observed) {
        h.best_observed = h.Y(i);
        h.best_x = h.X.row(i).transpose();
      }
  };
  update_best();

  Kernel warm;
  warm.lengthscales = 0.5 * kwidth;
  warm.outputscale = 1.0;
  std::vector<Kernel> warm_g(static_cast<std::size_t>(L), warm);

  // BQ keeps a single fixed empirical measure of the prior.
  std::optional<EmpiricalMeasure> fixed_measure;

  for (int t = 1; t <= config.max_iterations; ++t) {
    const std::uint64_t it_seed = derive_seed(config.seed, static_cast<std::uint64_t>(t) + 1000);
    IterationRecord rec;
    rec.iteration = t;

    const Matrix Z = embed_for_kernel(problem.prior, h.X);
    detail::FittedModel model = detail::fit_model(Z, h.Y, config, kwidth, warm, true, derive_seed(it_seed, 1));
    warm = model.kernel;
    ConstraintModel cmodel;
    for (Index l = 0; l < L; ++l) {
      auto fm = detail::fit_model(Z, h.G.col(l), config, kwidth, warm_g[static_cast<std::size_t>(l)], false,
                                  derive_seed(it_seed, 10 + static_cast<std::uint64_t>(l)));
      warm_g[static_cast<std::size_t>(l)] = fm.kernel;
      cmodel.models.push_back(std::move(fm.gp));
    }
    const GPPosterior& gp = model.gp;
    auto embed = [&](const Matrix& X) { return embed_for_kernel(problem.prior, X); };

    Matrix batch;
    Vector batch_w;
    std::vector<Index> batch_pool_rows;
    std::optional<EmpiricalMeasure> measure;

    // Candidate set for pool problems: unqueried pool rows.
    std::vector<Index> remaining;
    if (problem.pool) {
      for (std::size_t i = 0; i < pool_used.size(); ++i)
        if (!pool_used[i]) remaining.push_back(static_cast<Index>(i));
      if (remaining.empty()) break;
    }

    try {
      if (config.policy == Policy::Random) {
        const Index n = config.n_max;
        if (problem.pool) {
          Rng rng(derive_seed(it_seed, 2));
          std::shuffle(remaining.begin(), remaining.end(), rng);
          batch_pool_rows.assign(remaining.begin(), remaining.begin() + std::min<Index>(n, static_cast<Index>(remaining.size())));
          batch = select_rows(*problem.pool, batch_pool_rows);
        } else {
          batch = sample(problem.prior, n, derive_seed(it_seed, 2));
        }
        batch_w = Vector::Constant(batch.rows(), 1.0 / static_cast<double>(batch.rows()));
      } else if (config.policy == Policy::BatchThompson) {
        Matrix cand;
        std::vector<Index> cand_rows;
        if (problem.pool) {
          cand_rows = remaining;
          if (static_cast<Index>(cand_rows.size()) > config.ts_candidates) {
            Rng rng(derive_seed(it_seed, 3));
            std::shuffle(cand_rows.begin(), cand_rows.end(), rng);
            cand_rows.resize(static_cast<std::size_t>(config.ts_candidates));
          }
          cand = select_rows(*problem.pool, cand_rows);
        } else {
          cand = sample(problem.prior, std::min(config.N, config.ts_candidates), derive_seed(it_seed, 3));
        }
        const std::vector<Index> chosen = detail::batch_thompson(gp, embed(cand), config.n_max, derive_seed(it_seed, 4));
        batch = select_rows(cand, chosen);
        if (problem.pool)
          for (Index c : chosen) batch_pool_rows.push_back(cand_rows[static_cast<std::size_t>(c)]);
        batch_w = Vector::Constant(batch.rows(), 1.0 / static_cast<double>(batch.rows()));
      } else {
        // Target measure in the original coordinates.
        LogDensityFn base;
        const double y_best = incumbent(gp);
        LogDensityFn lfi_z = lfi_log_pi(gp, y_best);
        LogDensityFn prior_log = [&](const Matrix& X) { return log_density(problem.prior, X); };
        if (config.mode == SolverMode::BO_LFI)
          base = [&, lfi_z](const Matrix& X) -> Vector { return prior_log(X) + lfi_z(embed(X)); };
        else
          base = prior_log;
        LogDensityFn target = base;
        if (constrained)
          target = [&, base](const Matrix& X) -> Vector {
            Vector out = base(X);
            const Vector q = feasibility(cmodel, embed(X));
            for (Index i = 0; i < X.rows(); ++i)
              out(i) += q(i) > 0.0 ? std::log(q(i)) : -std::numeric_limits<double>::infinity();
            return out;
          };

        std::vector<Index> measure_pool_rows;
        if (problem.pool) {
          Matrix P = select_rows(*problem.pool, remaining);
          if (config.mode == SolverMode::BO_TS) {
            std::vector<Index> rows = remaining;
            if (static_cast<Index>(rows.size()) > config.ts_candidates) {
              Rng rng(derive_seed(it_seed, 3));
              std::shuffle(rows.begin(), rows.end(), rng);
              rows.resize(static_cast<std::size_t>(config.ts_candidates));
            }
            P = select_rows(*problem.pool, rows);
            const EmpiricalMeasure ts = ts_empirical(gp, embed(P), config.ts_draws, derive_seed(it_seed, 5));
            measure = EmpiricalMeasure(P, ts.weights);
            measure_pool_rows = rows;
          } else {
            Vector w;
            if (!normalise_log_weights(target(P), w)) w = Vector::Constant(P.rows(), 1.0 / static_cast<double>(P.rows()));
            measure = EmpiricalMeasure(P, w);
            measure_pool_rows = remaining;
          }
        } else if (config.mode == SolverMode::BO_TS) {
          const Matrix cand = sample(problem.prior, std::min(config.N, config.ts_candidates), derive_seed(it_seed, 3));
          const EmpiricalMeasure ts = ts_empirical(gp, embed(cand), config.ts_draws, derive_seed(it_seed, 5));
          measure = EmpiricalMeasure(cand, ts.weights);
        } else if (config.mode == SolverMode::BQ) {
          if (!fixed_measure) fixed_measure = EmpiricalMeasure::uniform(sample(problem.prior, config.N, derive_seed(config.seed, 5)));
          measure = *fixed_measure;
        } else if (config.mode == SolverMode::AL && !constrained) {
          measure = EmpiricalMeasure::uniform(sample(problem.prior, config.N, derive_seed(it_seed, 5)));
        } else {
          SirOptions so;
          so.proposal_family = mixture_proposal_family(problem.prior, config.proposal_components);
          measure = sir(problem.prior, target, config.N, derive_seed(it_seed, 5), so).measure;
        }

        // Drop zero-weight atoms before selection.
        std::vector<Index> support;
        for (Index i = 0; i < measure->size(); ++i)
          if (measure->weights(i) > 0.0) support.push_back(i);
        const Vector sw = [&] {
          Vector v(static_cast<Index>(support.size()));
          for (std::size_t k = 0; k < support.size(); ++k) v(static_cast<Index>(k)) = measure->weights(support[k]);
          return Vector(v / v.sum());
        }();
        const EmpiricalMeasure active(select_rows(measure->points, support), sw);
        const EmpiricalMeasure active_z(embed(active.points), active.weights);

        LPSettings lps;
        lps.n_max = config.n_max;
        lps.eps_lp = config.eps_lp;
        lps.mode = config.lp_mode;
        lps.adaptive_tolerance = config.eps_policy == EpsPolicy::Adaptive;
        if (constrained && lps.n_max < 3) lps.n_max = 3;

        const Index M = std::min(config.M, active.size());
        const Index rank = std::min(test_function_count(lps.n_max, constrained), M);
        const NystromBasis basis = build_basis(CovarianceFunction::posterior(gp), active_z, M, rank,
                                               derive_seed(it_seed, 6), config.nystrom);
        const QuadratureRule rule =
            select_batch(gp, active_z, basis, config.acquisition, constrained ? &cmodel : nullptr, lps);

        batch = select_rows(active.points, rule.indices);
        batch_w = rule.weights;
        if (problem.pool)
          for (Index i : rule.indices)
            batch_pool_rows.push_back(measure_pool_rows[static_cast<std::size_t>(support[static_cast<std::size_t>(i)])]);
        rec.eps_lp = rule.diagnostics.eps_lp;
        rec.eps_vio = rule.diagnostics.eps_vio;
        rec.mmd2 = rule.diagnostics.mmd2;
        const MeasureStats ms = measure_stats(active, problem.x_star);
        rec.mv = ms.mv;
        if (ms.md) rec.md = *ms.md;
        measure = active;
      }
    } catch (const std::exception& e) {
      h.aborted = true;
      h.error = std::string("iteration ") + std::to_string(t) + ": " + e.what();
      return h;
    }

    // Parallel query of the batch.
    try {
      rec.Y = detail::call_oracle(problem.objective, batch, "objective");
      rec.G.resize(batch.rows(), L);
      for (Index l = 0; l < L; ++l)
        rec.G.col(l) = detail::call_oracle(problem.constraints[static_cast<std::size_t>(l)], batch, "constraint");
    } catch (const std::exception& e) {
      h.aborted = true;
      h.error = std::string("iteration ") + std::to_string(t) + ": " + e.what();
      return h;
    }
    for (Index r : batch_pool_rows) pool_used[static_cast<std::size_t>(r)] = true;

    rec.X = batch;
    rec.w = batch_w;
    rec.batch_size = batch.rows();
    if (constrained) {
      Index bad = 0;
      for (Index i = 0; i < batch.rows(); ++i) bad += detail::feasible_row(rec.G, i) ? 0 : 1;
      rec.violation_fraction = static_cast<double>(bad) / static_cast<double>(std::max<Index>(batch.rows(), 1));
    }

    const Index old = h.X.rows();
    h.X.conservativeResize(old + batch.rows(), Eigen::NoChange);
    h.X.bottomRows(batch.rows()) = batch;
    h.Y.conservativeResize(old + batch.rows());
    h.Y.tail(batch.rows()) = rec.Y;
    h.G.conservativeResize(old + batch.rows(), Eigen::NoChange);
    if (L > 0) h.G.bottomRows(batch.rows()) = rec.G;
    update_best();
    rec.best_observed = h.best_observed;
    if (problem.y_star) rec.simple_regret = *problem.y_star - h.best_observed;

    if (measure) {
      // Integral estimates under the posterior conditioned on the new batch.
      Dataset upd{embed_for_kernel(problem.prior, h.X), model.standardiser.apply(h.Y), gp.data().noise_variance};
      try {
        const GPPosterior gp2 = fit_posterior(upd, gp.kernel(), gp.prior_mean());
        const Matrix bz = embed_for_kernel(problem.prior, batch);
        const double s = model.standardiser.scale;
        rec.z_mean = model.standardiser.shift + s * batch_w.dot(gp2.mean(bz));
        rec.z_var = s * s * integral_variance(gp2, EmpiricalMeasure(embed_for_kernel(problem.prior, measure->points), measure->weights));
      } catch (const FactorisationError&) {
      }
    }
    rec.wall_ms = elapsed_ms();
    const bool stop = std::isfinite(rec.mv) ? rec.mv <= config.delta : std::isinf(config.delta);
    h.records.push_back(std::move(rec));
    if (stop) break;
  }
  return h;
}

}  // namespace sober
