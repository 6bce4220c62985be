#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "sober/core.hpp"
#include "sober/normal.hpp"

using namespace sober;

TEST(Normal, CdfKnownValues) {
  EXPECT_NEAR(normal::cdf(0.0), 0.5, 1e-15);
  EXPECT_NEAR(normal::cdf(1.0), 0.8413447460685429, 1e-14);
  EXPECT_NEAR(normal::cdf(-1.96), 0.024997895148220435, 1e-14);
}

TEST(Normal, LogCdfMatchesDirectLogInSafeRange) {
  for (double z = -7.9; z < 6.0; z += 0.37) EXPECT_NEAR(normal::log_cdf(z), std::log(normal::cdf(z)), 1e-12) << z;
}

TEST(Normal, LogCdfDeepTailIsFiniteAndAccurate) {
  // Continuity across the switch point and agreement with erfc where it is still representable.
  for (double z : {-8.0001, -10.0, -20.0, -30.0}) {
    const double direct = std::log(0.5 * std::erfc(-z / std::numbers::sqrt2));
    EXPECT_NEAR(normal::log_cdf(z), direct, 1e-6 * std::abs(direct)) << z;
  }
  EXPECT_TRUE(std::isfinite(normal::log_cdf(-1e4)));
  EXPECT_LT(normal::log_cdf(-1e4), normal::log_cdf(-1e3));
}

TEST(Core, DeriveSeedIsDeterministicAndSpreads) {
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
  EXPECT_NE(derive_seed(7, 3), derive_seed(7, 4));
  EXPECT_NE(derive_seed(7, 3), derive_seed(8, 3));
}

TEST(Core, NormaliseLogWeights) {
  Vector lw(4);
  lw << 0.0, std::log(3.0), -std::numeric_limits<double>::infinity(), 1000.0;
  Vector w;
  ASSERT_TRUE(normalise_log_weights(lw, w));
  EXPECT_NEAR(w.sum(), 1.0, 1e-15);
  EXPECT_NEAR(w(3), 1.0, 1e-15);
  EXPECT_EQ(w(2), 0.0);

  Vector bad = Vector::Constant(3, -std::numeric_limits<double>::infinity());
  EXPECT_FALSE(normalise_log_weights(bad, w));
  bad(1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(normalise_log_weights(bad, w));
}

TEST(Core, EffectiveSampleSize) {
  EXPECT_NEAR(effective_sample_size(Vector::Constant(10, 0.1)), 10.0, 1e-12);
  Vector w = Vector::Zero(10);
  w(3) = 1.0;
  EXPECT_NEAR(effective_sample_size(w), 1.0, 1e-12);
}

TEST(Core, SelectRows) {
  Matrix X(3, 2);
  X << 1, 2, 3, 4, 5, 6;
  const Matrix S = select_rows(X, {2, 0, 2});
  EXPECT_EQ(S.rows(), 3);
  EXPECT_EQ(S(0, 0), 5);
  EXPECT_EQ(S(1, 1), 2);
}
