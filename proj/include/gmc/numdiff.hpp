#pragma once

// Central finite differences for scalar functions of a matrix argument.

#include <gmc/common.hpp>

namespace gmc {

/// d f / d X_ij ~ (f(X + h e_ij) - f(X - h e_ij)) / 2h for every entry.
template <typename Fn>
Matrix central_difference(Fn&& f, const Matrix& x, double step = 1e-5) {
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x;
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = 0; i < x.rows(); ++i) {
      const double orig = probe(i, j);
      probe(i, j) = orig + step;
      const double up = f(probe);
      probe(i, j) = orig - step;
      const double down = f(probe);
      probe(i, j) = orig;
      grad(i, j) = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

/// Largest entrywise |a - b| / max(|a|, |b|, floor), where the floor is
/// floor_rel times the largest magnitude in b (and at least 1e-12). Entries
/// that are tiny next to the rest of the gradient are compared on that scale.
inline double max_relative_error(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b,
                                 double floor_rel = 1e-3) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "shape mismatch ", detail::shape(a), " vs ",
                  detail::shape(b));
  if (a.size() == 0) return 0.0;
  const double floor = std::max(1e-12, floor_rel * b.cwiseAbs().maxCoeff());
  double worst = 0.0;
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = 0; i < a.rows(); ++i) {
      const double denom = std::max({std::abs(a(i, j)), std::abs(b(i, j)), floor});
      worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / denom);
    }
  return worst;
}

}  // namespace gmc
