#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "sober/bench/functions.hpp"
#include "sober/solver.hpp"

using namespace sober;

namespace {

Problem problem_from(const bench::TestFunction& f) {
  Problem p;
  p.objective = f.evaluate;
  p.constraints = f.constraints;
  p.prior = f.prior;
  p.x_star = f.x_star;
  p.y_star = f.y_star;
  return p;
}

SolverConfig quick_config(std::uint64_t seed, Index n, int T) {
  SolverConfig c;
  c.N = 1000;
  c.M = 150;
  c.n_max = n;
  c.max_iterations = T;
  c.seed = seed;
  c.hyper_restarts = 2;
  c.hyper_iterations = 40;
  return c;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

// ---------------------------------------------------------------------------
// integral_estimates, measure_stats, expected_violation

TEST(IntegralEstimates, ZeroVarianceAtTrainingPoints) {
  Matrix X(3, 1);
  X << 0.1, 0.5, 0.9;
  const GPPosterior gp = fit_posterior(Dataset(X, Vector::Random(3), 0.0), Kernel::isotropic(1, 0.3, 1.0));
  const EmpiricalMeasure m = EmpiricalMeasure::uniform(X);
  const QuadratureRule rule = make_rule(m, {0, 1, 2}, Vector::Constant(3, 1.0 / 3));
  EXPECT_NEAR(integral_estimates(gp, m, rule).variance, 0.0, 1e-8);
}

TEST(IntegralEstimates, TwoPointHandSum) {
  Matrix X(2, 1);
  X << 0.0, 1.0;
  const GPPosterior gp = fit_posterior(Dataset(X, (Vector(2) << 1.0, 3.0).finished(), 0.0), Kernel::isotropic(1, 0.2, 1.0));
  const EmpiricalMeasure m = EmpiricalMeasure::uniform(X);
  const QuadratureRule rule = make_rule(m, {0, 1}, Vector::Constant(2, 0.5));
  EXPECT_NEAR(integral_estimates(gp, m, rule).mean, 2.0, 1e-10);
}

TEST(IntegralEstimates, GaussianPriorMeanMatchesQuadratureOracle) {
  Matrix X(5, 1);
  X << -1.5, -0.4, 0.2, 0.9, 2.0;
  const GPPosterior gp =
      fit_posterior(Dataset(X, (Vector(5) << 0.3, -0.2, 1.0, 0.5, -0.7).finished(), 1e-4), Kernel::isotropic(1, 0.6, 1.0));
  const DomainPrior prior = Gaussian{Vector::Zero(1), Matrix::Identity(1, 1)};
  const Index N = 20000;
  const EmpiricalMeasure m = EmpiricalMeasure::uniform(sample(prior, N, 3));
  std::vector<Index> all(static_cast<std::size_t>(N));
  for (Index i = 0; i < N; ++i) all[static_cast<std::size_t>(i)] = i;
  const Vector mvals = gp.mean(m.points);
  const double est = m.weights.dot(mvals);
  // Deterministic oracle: 10^6-point midpoint rule of m(x) phi(x) over [-9, 9].
  const Index G = 1000000;
  const double h = 18.0 / static_cast<double>(G);
  Matrix grid(G, 1);
  for (Index i = 0; i < G; ++i) grid(i, 0) = -9.0 + (static_cast<double>(i) + 0.5) * h;
  const Vector mg = gp.mean(grid);
  double oracle = 0.0;
  for (Index i = 0; i < G; ++i) oracle += mg(i) * normal::pdf(grid(i, 0)) * h;
  const double se = std::sqrt((mvals.array() - est).square().sum() / static_cast<double>(N - 1)) / std::sqrt(static_cast<double>(N));
  EXPECT_NEAR(est, oracle, 3.0 * se);
}

TEST(MeasureStats, PointMassAndSymmetricPair) {
  const EmpiricalMeasure point(Matrix::Constant(1, 2, 0.3), Vector::Ones(1));
  const MeasureStats a = measure_stats(point, Vector::Constant(2, 0.3));
  EXPECT_NEAR(a.mv, 0.0, 1e-15);
  EXPECT_NEAR(*a.md, 0.0, 1e-15);
  Matrix X(2, 1);
  X << -1.0, 1.0;
  const MeasureStats b = measure_stats(EmpiricalMeasure::uniform(X));
  EXPECT_NEAR(b.barycentre(0), 0.0, 1e-15);
  EXPECT_NEAR(b.mv, 1.0, 1e-15);
  EXPECT_FALSE(b.md.has_value());
}

TEST(MeasureStats, MatchesDirectSum) {
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Matrix X = Matrix::NullaryExpr(100, 3, [&] { return u(rng); });
  Vector w = Vector::NullaryExpr(100, [&] { return u(rng); });
  w /= w.sum();
  const MeasureStats s = measure_stats(EmpiricalMeasure(X, w));
  Vector bary = Vector::Zero(3);
  for (Index i = 0; i < 100; ++i) bary += w(i) * X.row(i).transpose();
  double mv = 0.0;
  for (Index i = 0; i < 100; ++i)
    for (Index k = 0; k < 3; ++k) mv += w(i) * (X(i, k) - bary(k)) * (X(i, k) - bary(k));
  EXPECT_NEAR(s.mv, mv, 1e-10);
}

TEST(ExpectedViolation, Examples) {
  const EmpiricalMeasure m = EmpiricalMeasure::uniform(Matrix::Zero(2, 1));
  EXPECT_EQ(expected_violation(m, Vector::Ones(2)), 0.0);
  EXPECT_EQ(expected_violation(m, Vector::Zero(2)), 1.0);
  EXPECT_NEAR(expected_violation(m, (Vector(2) << 1.0, 0.5).finished()), 0.25, 1e-15);
}

// ---------------------------------------------------------------------------
// run

TEST(Run, InfiniteDeltaStopsAfterOneBatch) {
  SolverConfig c = quick_config(1, 5, 5);
  c.delta = std::numeric_limits<double>::infinity();
  const History h = run(problem_from(bench::branin()), c);
  ASSERT_FALSE(h.aborted) << h.error;
  EXPECT_EQ(h.records.size(), 1u);
}

TEST(Run, BraninStructure) {
  SolverConfig c = quick_config(2, 30, 3);
  const History h = run(problem_from(bench::branin()), c);
  ASSERT_FALSE(h.aborted) << h.error;
  EXPECT_LE(h.records.size(), 3u);
  Index total = h.initial_size;
  for (const auto& r : h.records) {
    EXPECT_LE(r.batch_size, 30);
    EXPECT_NEAR(r.w.sum(), 1.0, 1e-10);
    total += r.batch_size;
  }
  EXPECT_EQ(h.X.rows(), total);
  EXPECT_EQ(h.Y.size(), total);
}

TEST(Run, DeterministicGivenSeed) {
  const SolverConfig c = quick_config(3, 5, 2);
  const History a = run(problem_from(bench::branin()), c);
  const History b = run(problem_from(bench::branin()), c);
  ASSERT_FALSE(a.aborted);
  EXPECT_EQ(a.X, b.X);
  EXPECT_EQ(a.Y, b.Y);
}

TEST(Run, AckleyLfiBeatsRandomAndMvTracksRegret) {
  std::vector<double> sober_final, random_final, mv, regret;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SolverConfig c = quick_config(seed, 20, 10);
    const Problem p = problem_from(bench::ackley(2));
    const History hs = run(p, c);
    ASSERT_FALSE(hs.aborted) << hs.error;
    sober_final.push_back(hs.records.back().simple_regret);
    for (const auto& r : hs.records) {
      mv.push_back(r.mv);
      regret.push_back(r.simple_regret);
    }
    c.policy = Policy::Random;
    const History hr = run(p, c);
    ASSERT_FALSE(hr.aborted) << hr.error;
    random_final.push_back(hr.records.back().simple_regret);
  }
  EXPECT_LT(median(sober_final), median(random_final));
  const Eigen::Map<const Vector> a(mv.data(), static_cast<Index>(mv.size()));
  const Eigen::Map<const Vector> b(regret.data(), static_cast<Index>(regret.size()));
  const Vector ca = a.array() - a.mean(), cb = b.array() - b.mean();
  EXPECT_GT(ca.dot(cb) / (ca.norm() * cb.norm()), 0.0);
}

TEST(Run, IncumbentNonDecreasing) {
  for (Policy pol : {Policy::Sober, Policy::Random, Policy::BatchThompson}) {
    SolverConfig c = quick_config(4, 5, 4);
    c.policy = pol;
    const History h = run(problem_from(bench::branin()), c);
    ASSERT_FALSE(h.aborted) << h.error;
    for (std::size_t t = 1; t < h.records.size(); ++t)
      EXPECT_GE(h.records[t].best_observed, h.records[t - 1].best_observed) << to_string(pol);
  }
}

TEST(Run, BqIntegralVarianceNonIncreasing) {
  const bench::TestFunction f = bench::branin();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SolverConfig c = quick_config(seed, 5, 6);
    c.mode = SolverMode::BQ;
    c.fixed_kernel = Kernel::isotropic(2, 0.8, 1.0);
    const History h = run(problem_from(f), c);
    ASSERT_FALSE(h.aborted) << h.error;
    for (std::size_t t = 1; t < h.records.size(); ++t) EXPECT_LE(h.records[t].z_var, h.records[t - 1].z_var + 1e-8);
  }
}

TEST(Run, ConstrainedLogsViolationAndAdaptiveEps) {
  SolverConfig c = quick_config(5, 10, 3);
  c.eps_policy = EpsPolicy::Adaptive;
  c.lp_mode = LpMode::ToleranceLP;
  const History h = run(problem_from(bench::branin_constrained()), c);
  ASSERT_FALSE(h.aborted) << h.error;
  EXPECT_EQ(h.G.cols(), 2);
  for (const auto& r : h.records) {
    EXPECT_GE(r.violation_fraction, 0.0);
    EXPECT_LE(r.violation_fraction, 1.0);
    EXPECT_GE(r.eps_vio, 0.0);
    EXPECT_LE(r.eps_vio, 1.0);
    EXPECT_DOUBLE_EQ(r.eps_lp, std::max(r.eps_vio, 1e-8));
  }
}

TEST(Run, PoolModeNeverRepeatsRows) {
  Rng rng(6);
  std::uniform_real_distribution<double> u(-3.0, 2.0);
  Problem p = problem_from(bench::branin());
  p.pool = Matrix::NullaryExpr(150, 2, [&] { return u(rng); });
  SolverConfig c = quick_config(6, 8, 4);
  for (SolverMode mode : {SolverMode::BO_LFI, SolverMode::BO_TS}) {
    c.mode = mode;
    const History h = run(p, c);
    ASSERT_FALSE(h.aborted) << h.error;
    std::set<std::vector<double>> seen;
    for (Index i = 0; i < h.X.rows(); ++i) seen.insert({h.X(i, 0), h.X(i, 1)});
    EXPECT_EQ(static_cast<Index>(seen.size()), h.X.rows());
  }
}

TEST(Run, OracleFailureAbortsWithPartialHistory) {
  Problem p = problem_from(bench::branin());
  auto calls = std::make_shared<int>(0);
  p.objective = [calls, f = p.objective](const Matrix& X) -> Vector {
    if (++*calls == 3) throw std::runtime_error("oracle down");
    return f(X);
  };
  const History h = run(p, quick_config(7, 5, 5));
  EXPECT_TRUE(h.aborted);
  EXPECT_NE(h.error.find("oracle down"), std::string::npos);
  EXPECT_EQ(h.records.size(), 1u);
}

TEST(Run, OracleLengthMismatchAborts) {
  Problem p = problem_from(bench::branin());
  p.objective = [](const Matrix& X) -> Vector { return Vector::Zero(X.rows() + 1); };
  const History h = run(p, quick_config(8, 5, 2));
  EXPECT_TRUE(h.aborted);
}

TEST(Config, Validation) {
  SolverConfig c;
  c.n_max = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SolverConfig{};
  c.M = c.N + 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
