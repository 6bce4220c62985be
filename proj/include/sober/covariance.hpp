#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <utility>

#include "core.hpp"
#include "gp.hpp"

namespace sober {

/// Type-erased positive semi-definite kernel used by the quadrature code.
/// A GP posterior is adapted by reference and must outlive the wrapper.
class CovarianceFunction {
 public:
  using CrossFn = std::function<Matrix(const Matrix&, const Matrix&)>;
  using DiagFn = std::function<Vector(const Matrix&)>;
  using BilinearFn = std::function<double(const Matrix&, const Vector&, const Matrix&, const Vector&)>;

  CovarianceFunction(CrossFn cross, DiagFn diag, BilinearFn bilinear = {})
      : cross_(std::move(cross)), diag_(std::move(diag)), bilinear_(std::move(bilinear)) {}

  static CovarianceFunction posterior(const GPPosterior& gp) {
    return CovarianceFunction([&gp](const Matrix& A, const Matrix& B) { return gp.covariance(A, B); },
                              [&gp](const Matrix& A) { return gp.variance(A); },
                              [&gp](const Matrix& A, const Vector& a, const Matrix& B, const Vector& b) {
                                return gp.bilinear(A, a, B, b);
                              });
  }

  static CovarianceFunction prior(Kernel kernel) {
    auto k = std::make_shared<const Kernel>(std::move(kernel));
    return CovarianceFunction([k](const Matrix& A, const Matrix& B) { return k->matrix(A, B); },
                              [k](const Matrix& A) { return k->diagonal(A); },
                              [k](const Matrix& A, const Vector& a, const Matrix& B, const Vector& b) {
                                return k->bilinear(A, a, B, b);
                              });
  }

  Matrix operator()(const Matrix& A, const Matrix& B) const { return cross_(A, B); }

  Matrix symmetric(const Matrix& A) const {
    Matrix C = cross_(A, A);
    return 0.5 * (C + C.transpose());
  }

  Vector diagonal(const Matrix& A) const { return diag_(A); }

  /// a^T C(A, B) b.
  double bilinear(const Matrix& A, const Vector& a, const Matrix& B, const Vector& b) const {
    if (bilinear_) return bilinear_(A, a, B, b);
    constexpr Index block = 512;
    double total = 0.0;
    for (Index start = 0; start < A.rows(); start += block) {
      const Index len = std::min(block, A.rows() - start);
      total += a.segment(start, len).dot(cross_(A.middleRows(start, len), B) * b);
    }
    return total;
  }

 private:
  CrossFn cross_;
  DiagFn diag_;
  BilinearFn bilinear_;
};

}  // namespace sober
