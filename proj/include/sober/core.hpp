#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sober {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Thrown when a matrix cannot be factorised even after the jitter escalation.
class FactorisationError : public std::runtime_error {
 public:
  FactorisationError(const std::string& what, Index size)
      : std::runtime_error(what + " (matrix size " + std::to_string(size) + ")"), size_(size) {}
  Index size() const { return size_; }

 private:
  Index size_;
};

class DimensionError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Derives an independent, reproducible stream seed from a base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Vector standard_normal_vector(Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(n);
  for (Index i = 0; i < n; ++i) z(i) = normal(rng);
  return z;
}

inline Matrix select_rows(const Matrix& X, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = X.row(rows[i]);
  return out;
}

/// Normalises log-weights into a simplex with the log-sum-exp trick.
/// Returns false if no finite entry exists.
inline bool normalise_log_weights(const Vector& log_w, Vector& w) {
  double max_log = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < log_w.size(); ++i)
    if (std::isfinite(log_w(i)) && log_w(i) > max_log) max_log = log_w(i);
  w.resize(log_w.size());
  if (!std::isfinite(max_log)) {
    w.setZero();
    return false;
  }
  for (Index i = 0; i < log_w.size(); ++i)
    w(i) = std::isfinite(log_w(i)) ? std::exp(log_w(i) - max_log) : 0.0;
  w /= w.sum();
  return true;
}

inline double effective_sample_size(const Vector& w) {
  const double s2 = w.squaredNorm();
  if (s2 <= 0.0) return 0.0;
  const double s = w.sum();
  return s * s / s2;
}

}  // namespace sober
