#pragma once

#include <cmath>
#include <numbers>

namespace sober::normal {

inline double pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

inline double cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double log_pdf(double z) { return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi); }

/// log Phi(z). Below z = -8 the Mills-ratio asymptotic series is used so the
/// result stays finite for arbitrarily negative arguments.
inline double log_cdf(double z) {
  if (z >= -8.0) return std::log(cdf(z));
  const double inv2 = 1.0 / (z * z);
  // 1 - 1/z^2 + 3/z^4 - 15/z^6 + 105/z^8
  const double series = 1.0 - inv2 * (1.0 - 3.0 * inv2 * (1.0 - 5.0 * inv2 * (1.0 - 7.0 * inv2)));
  return log_pdf(z) - std::log(-z) + std::log(series);
}

}  // namespace sober::normal
