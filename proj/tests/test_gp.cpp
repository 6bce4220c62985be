#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "sober/gp.hpp"
#include "sober/io.hpp"

using namespace sober;

namespace {

Matrix uniform_points(Index n, Index d, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix X(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < d; ++k) X(i, k) = u(rng);
  return X;
}

// Naive per-entry kernel, independent of the vectorised Gram assembly.
Matrix naive_gram(const Kernel& k, const Matrix& A, const Matrix& B) {
  Matrix K(A.rows(), B.rows());
  for (Index i = 0; i < A.rows(); ++i)
    for (Index j = 0; j < B.rows(); ++j) {
      double r2 = 0.0;
      for (Index c = 0; c < A.cols(); ++c) {
        const double z = (A(i, c) - B(j, c)) / k.lengthscales(c);
        r2 += z * z;
      }
      K(i, j) = k.outputscale * std::exp(-0.5 * r2);
    }
  return K;
}

// Dense-inverse oracle for the posterior formulas.
struct DenseOracle {
  Kernel k;
  Dataset data;
  double m0;
  Matrix Kinv;
  DenseOracle(Kernel kk, Dataset dd, double mm) : k(std::move(kk)), data(std::move(dd)), m0(mm) {
    Matrix G = naive_gram(k, data.X, data.X);
    G.diagonal().array() += data.noise_variance;
    Kinv = G.inverse();
  }
  Vector mean(const Matrix& A) const {
    return (Vector::Constant(A.rows(), m0) + naive_gram(k, A, data.X) * Kinv * (data.Y.array() - m0).matrix());
  }
  Matrix cov(const Matrix& A, const Matrix& B) const {
    return naive_gram(k, A, B) - naive_gram(k, A, data.X) * Kinv * naive_gram(k, data.X, B);
  }
  double lml() const {
    Matrix G = naive_gram(k, data.X, data.X);
    G.diagonal().array() += data.noise_variance;
    const Vector r = (data.Y.array() - m0).matrix();
    const double t = static_cast<double>(data.size());
    return -0.5 * r.dot(G.inverse() * r) - 0.5 * std::log(G.determinant()) - 0.5 * t * std::log(2.0 * std::numbers::pi);
  }
};

}  // namespace

TEST(Kernel, SymmetryAndDiagonal) {
  const Kernel k(Vector::Constant(3, 0.7), 2.5);
  const Matrix A = uniform_points(20, 3, 1);
  const Matrix K = k.matrix(A);
  EXPECT_LT((K - K.transpose()).norm(), 1e-14);
  for (Index i = 0; i < 20; ++i) EXPECT_DOUBLE_EQ(K(i, i), 2.5);
  EXPECT_LT((K - naive_gram(k, A, A)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Kernel, GramIsPositiveSemiDefiniteOnRandomSets) {
  for (int cfg = 0; cfg < 3; ++cfg) {
    const double ls = std::array<double, 3>{0.05, 0.5, 5.0}[static_cast<std::size_t>(cfg)];
    const Kernel k(Vector::Constant(2, ls), 1.3);
    for (int s = 0; s < 100; ++s) {
      const Matrix A = uniform_points(30, 2, static_cast<std::uint64_t>(1000 * cfg + s));
      const Matrix K = k.matrix(A);
      Eigen::SelfAdjointEigenSolver<Matrix> es(K);
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8 * K.trace());
    }
  }
}

TEST(Kernel, Validation) {
  EXPECT_THROW(Kernel(Vector::Constant(2, -1.0), 1.0), std::invalid_argument);
  EXPECT_THROW(Kernel(Vector::Constant(2, 1.0), 0.0), std::invalid_argument);
  const Kernel k(Vector::Constant(2, 1.0), 1.0);
  EXPECT_THROW(k.matrix(Matrix::Zero(3, 3), Matrix::Zero(2, 2)), DimensionError);
}

TEST(Kernel, BilinearMatchesDenseForm) {
  const Kernel k(Vector::Constant(2, 0.3), 1.7);
  const Matrix A = uniform_points(700, 2, 3), B = uniform_points(300, 2, 4);
  const Vector a = Vector::Random(700), b = Vector::Random(300);
  EXPECT_NEAR(k.bilinear(A, a, B, b), a.dot(naive_gram(k, A, B) * b), 1e-9);
}

TEST(FitPosterior, EmptyDatasetRecoversPrior) {
  const GPPosterior gp = fit_posterior(Dataset(Matrix(0, 1), Vector(0), 0.0), Kernel::isotropic(1, 1.0, 1.0), 0.0);
  const Matrix A = uniform_points(5, 1, 2, -10, 10);
  EXPECT_LT(gp.mean(A).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((gp.variance(A).array() - 1.0).abs().maxCoeff(), 1e-15);
}

TEST(FitPosterior, NoiselessInterpolationAtSinglePoint) {
  const GPPosterior gp =
      fit_posterior(Dataset(Matrix::Zero(1, 1), Vector::Constant(1, 2.0), 0.0), Kernel::isotropic(1, 1.0, 1.0), 0.0);
  const Matrix x = Matrix::Zero(1, 1);
  EXPECT_NEAR(gp.mean(x)(0), 2.0, 1e-12);
  EXPECT_NEAR(gp.variance(x)(0), 0.0, 1e-12);
}

TEST(FitPosterior, MatchesDenseInverseOracle) {
  const Matrix X = uniform_points(5, 2, 11);
  const Vector Y = Vector::Random(5);
  const Dataset data(X, Y, 0.01);
  const Kernel k(Vector::Constant(2, 0.4), 1.2);
  const GPPosterior gp = fit_posterior(data, k, 0.3);
  const DenseOracle oracle(k, data, 0.3);
  const Matrix A = uniform_points(7, 2, 12), B = uniform_points(4, 2, 13);
  EXPECT_LT((gp.mean(A) - oracle.mean(A)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((gp.covariance(A, B) - oracle.cov(A, B)).cwiseAbs().maxCoeff(), 1e-8);
  const auto [m, C] = posterior_mean_cov(gp, A, B);
  EXPECT_LT((C - oracle.cov(A, B)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((m - oracle.mean(A)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(PosteriorMeanCov, TrainingInputsNoiselessHaveZeroVariance) {
  const Matrix X = uniform_points(6, 2, 21);
  const GPPosterior gp = fit_posterior(Dataset(X, Vector::Random(6), 0.0), Kernel::isotropic(2, 0.3, 1.0), 0.0);
  const auto [m, C] = posterior_mean_cov(gp, X, X);
  EXPECT_LT(C.diagonal().cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_GE(C.diagonal().minCoeff(), 0.0);
  EXPECT_LT((C - C.transpose()).norm(), 1e-14);
  EXPECT_LT((m - gp.data().Y).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(PosteriorMeanCov, FarPointsRevertToPrior) {
  const Matrix X = uniform_points(6, 2, 22);
  const GPPosterior gp = fit_posterior(Dataset(X, Vector::Random(6), 1e-4), Kernel::isotropic(2, 0.2, 1.7), 0.0);
  Matrix far(1, 2);
  far << 5.0, 5.0;  // more than 20 lengthscales away
  EXPECT_NEAR(gp.variance(far)(0), 1.7, 1e-6);
}

TEST(PosteriorMeanCov, VarianceBoundedByPrior) {
  const Matrix X = uniform_points(15, 2, 23);
  const Kernel k = Kernel::isotropic(2, 0.3, 0.9);
  const GPPosterior gp = fit_posterior(Dataset(X, Vector::Random(15), 1e-6), k, 0.0);
  const Vector v = gp.variance(uniform_points(500, 2, 24));
  EXPECT_GE(v.minCoeff(), -1e-8 * 0.9);
  EXPECT_LE(v.maxCoeff(), 0.9 + 1e-12);
}

TEST(PosteriorMeanCov, DimensionMismatchThrows) {
  const GPPosterior gp = fit_posterior(Dataset(uniform_points(3, 2, 1), Vector::Zero(3), 0.0), Kernel::isotropic(2, 1, 1));
  EXPECT_THROW(gp.mean(Matrix::Zero(2, 3)), DimensionError);
}

TEST(GPInvariants, ConditioningNeverIncreasesVariance) {
  const Kernel k = Kernel::isotropic(2, 0.25, 1.0);
  const Matrix X = uniform_points(20, 2, 31);
  const Vector Y = Vector::Random(20);
  const Matrix A = uniform_points(200, 2, 32);
  const Vector v_small = fit_posterior(Dataset(X.topRows(10), Y.head(10), 1e-6), k).variance(A);
  const Vector v_big = fit_posterior(Dataset(X, Y, 1e-6), k).variance(A);
  EXPECT_LE((v_big - v_small).maxCoeff(), 1e-8);
}

TEST(GPInvariants, DuplicateNoiselessObservationLeavesMeanUnchanged) {
  const Kernel k = Kernel::isotropic(1, 0.3, 1.0);
  Matrix X(4, 1);
  X << 0.1, 0.4, 0.7, 0.9;
  Vector Y(4);
  Y << 1.0, -0.5, 0.3, 2.0;
  const GPPosterior a = fit_posterior(Dataset(X, Y, 0.0), k);
  Dataset dup(X, Y, 0.0);
  dup.append(X.row(2), Y.segment(2, 1));
  const GPPosterior b = fit_posterior(dup, k);
  const Matrix A = uniform_points(50, 1, 33);
  EXPECT_LT((a.mean(A) - b.mean(A)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FitPosterior, IndefiniteMatrixRaisesFactorisationErrorWithSize) {
  Matrix A(2, 2);
  A << 1.0, 2.0, 2.0, 1.0;
  try {
    detail::robust_cholesky(A);
    FAIL() << "expected FactorisationError";
  } catch (const FactorisationError& e) {
    EXPECT_EQ(e.size(), 2);
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}

TEST(LogMarginalLikelihood, MatchesDirectFormula) {
  const Matrix X = uniform_points(12, 2, 41);
  const Dataset data(X, Vector::Random(12), 0.05);
  const Kernel k(Vector::Constant(2, 0.35), 1.4);
  EXPECT_NEAR(log_marginal_likelihood(data, k, 0.2).value, DenseOracle(k, data, 0.2).lml(), 1e-6);
}

TEST(LogMarginalLikelihood, GradientMatchesFiniteDifferences) {
  const Matrix X = uniform_points(15, 2, 42);
  Dataset data(X, Vector::Random(15), 0.03);
  Vector ls(2);
  ls << 0.3, 0.6;
  const Kernel k(ls, 1.3);
  const LmlResult r = log_marginal_likelihood(data, k, 0.1, true);
  const double h = 1e-6;
  for (Index p = 0; p < 4; ++p) {
    Kernel kp = k, km = k;
    Dataset dp = data, dm = data;
    if (p < 2) {
      kp.lengthscales(p) *= std::exp(h);
      km.lengthscales(p) *= std::exp(-h);
    } else if (p == 2) {
      kp.outputscale *= std::exp(h);
      km.outputscale *= std::exp(-h);
    } else {
      dp.noise_variance *= std::exp(h);
      dm.noise_variance *= std::exp(-h);
    }
    const double fd =
        (log_marginal_likelihood(dp, kp, 0.1).value - log_marginal_likelihood(dm, km, 0.1).value) / (2.0 * h);
    EXPECT_NEAR(r.gradient(p), fd, 1e-5 * std::max(1.0, std::abs(fd))) << p;
  }
}

TEST(OptimizeHyperparameters, NeverWorseThanInitial) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Matrix X = uniform_points(20, 2, 50 + s);
    Vector Y(20);
    for (Index i = 0; i < 20; ++i) Y(i) = std::sin(6 * X(i, 0)) + X(i, 1);
    const Dataset data(X, Y, 1e-4);
    const Kernel init(Vector::Constant(2, 0.05 + 0.3 * static_cast<double>(s)), 0.5 + static_cast<double>(s));
    HyperparameterOptions opt;
    opt.seed = s;
    opt.restarts = 3;
    const HyperparameterFit fit = optimize_hyperparameters(data, init, opt);
    EXPECT_GE(fit.log_marginal_likelihood, fit.initial_log_marginal_likelihood - 1e-9);
    EXPECT_NEAR(fit.log_marginal_likelihood, log_marginal_likelihood(data, fit.kernel, Y.mean()).value, 1e-6);
    for (Index k = 0; k < 2; ++k) {
      EXPECT_GE(fit.kernel.lengthscales(k), 1e-3 * (X.col(k).maxCoeff() - X.col(k).minCoeff()) * (1 - 1e-9));
      EXPECT_LE(fit.kernel.lengthscales(k), 1e3 * (X.col(k).maxCoeff() - X.col(k).minCoeff()) * (1 + 1e-9));
    }
  }
}

TEST(OptimizeHyperparameters, DegenerateDataReturnsInitWithFlag) {
  const Dataset data(Matrix::Constant(5, 2, 0.3), Vector::Random(5), 0.1);
  const Kernel init = Kernel::isotropic(2, 0.5, 1.0);
  const HyperparameterFit fit = optimize_hyperparameters(data, init);
  EXPECT_TRUE(fit.degenerate);
  EXPECT_EQ(fit.kernel.lengthscales, init.lengthscales);
}

TEST(OptimizeHyperparameters, NeedsTwoPoints) {
  EXPECT_THROW(optimize_hyperparameters(Dataset(Matrix::Zero(1, 1), Vector::Zero(1), 0.0), Kernel::isotropic(1, 1, 1)),
               std::invalid_argument);
}

TEST(OptimizeHyperparameters, RecoversLengthscaleFromGpDraws) {
  // Oracle: a grid search over the lengthscale confirms where the LML basin lies.
  int hits = 0;
  const Kernel truth = Kernel::isotropic(1, 0.2, 1.0);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Matrix X = uniform_points(200, 1, 100 + s);
    Matrix K = truth.matrix(X);
    K.diagonal().array() += 1e-2;
    Rng rng(200 + s);
    const Vector Y = Eigen::LLT<Matrix>(K).matrixL() * standard_normal_vector(200, rng);
    const Dataset data(X, Y, 1e-2);
    HyperparameterOptions opt;
    opt.restarts = 3;
    opt.seed = s;
    opt.domain_width = Vector::Ones(1);
    const HyperparameterFit fit = optimize_hyperparameters(data, Kernel::isotropic(1, 0.5, 1.0), opt);
    const double l = fit.kernel.lengthscales(0);
    if (l >= 0.1 && l <= 0.4) ++hits;

    double best_l = 0.0, best = -std::numeric_limits<double>::infinity();
    for (double lg = 0.02; lg < 2.0; lg *= 1.1) {
      const double v = log_marginal_likelihood(data, Kernel::isotropic(1, lg, fit.kernel.outputscale), Y.mean()).value;
      if (v > best) {
        best = v;
        best_l = lg;
      }
    }
    EXPECT_GE(fit.log_marginal_likelihood, best - 1e-6) << "grid found a better lengthscale " << best_l;
  }
  EXPECT_GE(hits, 8);
}

TEST(Serialisation, KernelAndDatasetRoundTrip) {
  const Kernel k(Vector::Constant(3, 0.25), 2.0);
  const Dataset d(uniform_points(4, 3, 7), Vector::Random(4), 0.01);
  const nlohmann::json jk = k, jd = d;
  const Kernel k2 = jk.get<Kernel>();
  const Dataset d2 = jd.get<Dataset>();
  EXPECT_EQ(k2.lengthscales, k.lengthscales);
  EXPECT_EQ(k2.outputscale, k.outputscale);
  EXPECT_EQ(d2.X, d.X);
  EXPECT_EQ(d2.Y, d.Y);
  EXPECT_EQ(d2.noise_variance, d.noise_variance);
  EXPECT_THROW(nlohmann::json::parse(R"({"lengthscales":[-1],"outputscale":1})").get<Kernel>(), std::invalid_argument);
}
