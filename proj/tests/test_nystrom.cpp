#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "sober/nystrom.hpp"

using namespace sober;

namespace {

EmpiricalMeasure random_measure(Index N, Index d, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix X = Matrix::NullaryExpr(N, d, [&] { return u(rng); });
  Vector w = Vector::NullaryExpr(N, [&] { return 0.1 + u(rng); });
  return EmpiricalMeasure(std::move(X), w / w.sum());
}

CovarianceFunction rank_one_kernel() {
  auto v = [](const Matrix& A) -> Vector { return (A.col(0).array() * 3.0).sin() + 1.5; };
  return CovarianceFunction([v](const Matrix& A, const Matrix& B) -> Matrix { return v(A) * v(B).transpose(); },
                            [v](const Matrix& A) -> Vector { return v(A).array().square(); });
}

}  // namespace

TEST(Nystrom, FullRankReproducesKernelOnLandmarks) {
  const auto k = CovarianceFunction::prior(Kernel::isotropic(2, 0.5, 1.0));
  const Matrix X = random_measure(30, 2, 1).points;
  const NystromBasis b = build_basis_from_landmarks(k, X, 30);
  const Matrix phi = test_functions(b, X);
  const Matrix approx = phi * b.active_eigenvalues().cwiseInverse().asDiagonal() * phi.transpose();
  const Matrix K = k.symmetric(X);
  EXPECT_LT((approx - K).cwiseAbs().maxCoeff(), 1e-6 * b.eigenvalues(0));
  EXPECT_LT(residual_diagonal(b, X).maxCoeff(), 1e-6 * std::sqrt(b.eigenvalues(0)) + 1e-6);
}

TEST(Nystrom, RankOneKernelHasSinglePositiveEigenvalue) {
  const auto k = rank_one_kernel();
  const EmpiricalMeasure m = random_measure(200, 1, 2);
  const NystromBasis b = build_basis(k, m, 40, 10, 3);
  EXPECT_EQ(b.rank, 1);
  EXPECT_EQ(b.requested_rank, 10);
  EXPECT_LT(residual_diagonal(b, m.points).maxCoeff(), 1e-6);
}

TEST(Nystrom, EigenpairsMatchDenseSolverOracle) {
  const auto k = CovarianceFunction::prior(Kernel::isotropic(2, 0.3, 2.0));
  const Matrix L = random_measure(50, 2, 4).points;
  const NystromBasis b = build_basis_from_landmarks(k, L, 20);
  Eigen::SelfAdjointEigenSolver<Matrix> es(k.symmetric(L));
  const Vector ref = es.eigenvalues().reverse();
  for (Index j = 0; j < 20; ++j) EXPECT_NEAR(b.eigenvalues(j), ref(j), 1e-8 * ref(0)) << j;
  // Eigenvalues non-increasing and eigenvectors orthonormal.
  for (Index j = 1; j < b.eigenvalues.size(); ++j) EXPECT_LE(b.eigenvalues(j), b.eigenvalues(j - 1));
  const Matrix UtU = b.eigenvectors.transpose() * b.eigenvectors;
  EXPECT_LT((UtU - Matrix::Identity(50, 50)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Nystrom, TestFunctionsAtLandmarksAreScaledEigenvectors) {
  const auto k = CovarianceFunction::prior(Kernel::isotropic(1, 0.4, 1.0));
  const Matrix L = random_measure(25, 1, 5).points;
  const NystromBasis b = build_basis_from_landmarks(k, L, 6);
  const Matrix phi = test_functions(b, L);
  const Matrix expected = b.eigenvectors.leftCols(b.rank) * b.active_eigenvalues().asDiagonal();
  EXPECT_LT((phi - expected).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Nystrom, TestFunctionsMatchDirectProduct) {
  const auto k = CovarianceFunction::prior(Kernel::isotropic(2, 0.4, 1.0));
  const Matrix L = random_measure(25, 2, 6).points;
  const Matrix P = random_measure(40, 2, 7).points;
  const NystromBasis b = build_basis_from_landmarks(k, L, 5);
  const Matrix phi = test_functions(b, P);
  for (Index i = 0; i < P.rows(); ++i)
    for (Index j = 0; j < 5; ++j) {
      double direct = 0.0;
      for (Index m = 0; m < L.rows(); ++m)
        direct += b.eigenvectors(m, j) * k(L.row(m), P.row(i))(0, 0);
      EXPECT_NEAR(phi(i, j), direct, 1e-12);
    }
}

TEST(Nystrom, ZeroRankGivesEmptyMatrix) {
  const auto k = CovarianceFunction::prior(Kernel::isotropic(1, 0.4, 1.0));
  const NystromBasis b = build_basis_from_landmarks(k, random_measure(5, 1, 8).points, 0);
  EXPECT_EQ(test_functions(b, Matrix::Zero(3, 1)).cols(), 0);
  const Vector r = residual_diagonal(b, Matrix::Zero(3, 1));
  EXPECT_NEAR(r(0), 1.0, 1e-12);
}

TEST(Nystrom, ResidualBounds) {
  const auto k = CovarianceFunction::prior(Kernel::isotropic(2, 0.2, 1.5));
  const EmpiricalMeasure m = random_measure(400, 2, 9);
  const NystromBasis b = build_basis(k, m, 60, 20, 10);
  const Vector r = residual_diagonal(b, m.points);
  const Vector sd = k.diagonal(m.points).cwiseSqrt();
  EXPECT_GE(r.minCoeff(), 0.0);
  EXPECT_LE((r - sd).maxCoeff(), 1e-6);
  EXPECT_DOUBLE_EQ(nystrom_error(b, m.points), r.maxCoeff());
}

TEST(Nystrom, WeightedResidualMatchesDenseOracle) {
  const auto k = CovarianceFunction::prior(Kernel::isotropic(2, 0.3, 1.0));
  const EmpiricalMeasure m = random_measure(150, 2, 11);
  const NystromBasis b = build_basis(k, m, 30, 12, 12);
  // Dense oracle: C~ = K(X, L) U_r diag(1/lambda) U_r^T K(L, X).
  const Matrix KxL = k(m.points, b.landmarks);
  const Matrix Ur = b.eigenvectors.leftCols(b.rank);
  const Matrix Ct = KxL * Ur * b.active_eigenvalues().cwiseInverse().asDiagonal() * Ur.transpose() * KxL.transpose();
  const Vector diag = (k.symmetric(m.points).diagonal() - Ct.diagonal()).cwiseMax(0.0).cwiseSqrt();
  EXPECT_NEAR(m.weights.dot(residual_diagonal(b, m.points)), m.weights.dot(diag), 1e-10);
}

TEST(Nystrom, ResidualShrinksWithMoreLandmarks) {
  const auto k = CovarianceFunction::prior(Kernel::isotropic(2, 0.3, 1.0));
  const EmpiricalMeasure m = random_measure(500, 2, 13);
  std::vector<int> improved;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(100 + s);
    std::uniform_int_distribution<Index> pick(0, m.size() - 1);
    std::vector<Index> rows(80);
    for (auto& r : rows) r = pick(rng);
    const Matrix big = select_rows(m.points, rows);
    const Matrix small = big.topRows(20);
    const double r_small = residual_diagonal(build_basis_from_landmarks(k, small, 20), m.points).mean();
    const double r_big = residual_diagonal(build_basis_from_landmarks(k, big, 80), m.points).mean();
    improved.push_back(r_big <= r_small ? 1 : 0);
  }
  std::sort(improved.begin(), improved.end());
  EXPECT_EQ(improved[10], 1);
}

TEST(Nystrom, RandomisedSolverApproximatesLeadingSpectrum) {
  const auto k = CovarianceFunction::prior(Kernel::isotropic(2, 0.5, 1.0));
  const Matrix L = random_measure(300, 2, 14).points;
  NystromOptions opt;
  opt.randomized = true;
  opt.randomized_threshold = 100;
  const NystromBasis rb = build_basis_from_landmarks(k, L, 10, 1, opt);
  const NystromBasis db = build_basis_from_landmarks(k, L, 10);
  for (Index j = 0; j < 5; ++j) EXPECT_NEAR(rb.eigenvalues(j), db.eigenvalues(j), 1e-6 * db.eigenvalues(0));
}

TEST(Nystrom, InvalidArguments) {
  const auto k = CovarianceFunction::prior(Kernel::isotropic(1, 0.4, 1.0));
  const EmpiricalMeasure m = random_measure(10, 1, 15);
  EXPECT_THROW(build_basis(k, m, 11, 5, 1), std::invalid_argument);
  EXPECT_THROW(build_basis(k, m, 5, 6, 1), std::invalid_argument);
}
