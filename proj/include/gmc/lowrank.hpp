#pragma once

// Spectral utilities: trace norm and its variational (factor) form, the
// smoothed trace norm sum_i sqrt(s_i^2 + eps^2) and its gradient, truncated
// SVD approximation, and numerical rank of sampled predictors.

#include <gmc/common.hpp>

#include <Eigen/SVD>

#include <algorithm>
#include <span>

namespace gmc {

/// Non-increasing, non-negative singular values; length min(rows, cols).
struct SingularSpectrum {
  Vector values;

  double max() const { return values.size() == 0 ? 0.0 : values(0); }
  double sum() const { return values.sum(); }
};

/// U (m x p) and V (p x n) with M = U V.
struct FactorPair {
  Matrix u;
  Matrix v;

  Matrix product() const { return u * v; }
};

namespace detail {

inline void require_finite(const Eigen::Ref<const Matrix>& m, const char* what) {
  require(m.allFinite(), what, " requires finite entries");
}

inline void require_positive_eps(double eps) { require(eps > 0.0, "smoothing eps must be positive, got ", eps); }

}  // namespace detail

inline SingularSpectrum singular_values(const Eigen::Ref<const Matrix>& m) {
  detail::require_finite(m, "singular_values");
  if (m.size() == 0) return {Vector(0)};
  Eigen::BDCSVD<Matrix> svd(m);
  Vector s = svd.singularValues().cwiseMax(0.0);
  std::sort(s.begin(), s.end(), std::greater<>());
  return {std::move(s)};
}

inline double trace_norm(const Eigen::Ref<const Matrix>& m) { return singular_values(m).sum(); }

/// (|U|_F^2 + |V|_F^2) / 2, an upper bound on trace_norm(U V) that is attained
/// by the balanced SVD factorization.
inline double factor_trace_norm(const FactorPair& f) {
  detail::require(f.u.cols() == f.v.rows(), "factor inner dimensions differ: ", detail::shape(f.u), " * ",
                  detail::shape(f.v));
  return 0.5 * (f.u.squaredNorm() + f.v.squaredNorm());
}

/// U = A S^{1/2}, V = S^{1/2} B^T from the thin SVD M = A S B^T.
inline FactorPair balanced_factorization(const Eigen::Ref<const Matrix>& m) {
  detail::require_finite(m, "balanced_factorization");
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector root = svd.singularValues().cwiseMax(0.0).cwiseSqrt();
  return {svd.matrixU() * root.asDiagonal(), root.asDiagonal() * svd.matrixV().transpose()};
}

inline double smoothed_trace_norm(const Eigen::Ref<const Matrix>& m, double eps) {
  detail::require_positive_eps(eps);
  const SingularSpectrum s = singular_values(m);
  double total = 0.0;
  for (double sigma : s.values) total += std::hypot(sigma, eps);
  return total;
}

/// A diag(s_i / sqrt(s_i^2 + eps^2)) B^T; operator norm at most one.
inline Matrix smoothed_trace_norm_gradient(const Eigen::Ref<const Matrix>& m, double eps) {
  detail::require_positive_eps(eps);
  detail::require_finite(m, "smoothed_trace_norm_gradient");
  if (m.size() == 0) return Matrix(m.rows(), m.cols());
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Vector ratio = svd.singularValues().cwiseMax(0.0);
  for (double& s : ratio) s = s / std::hypot(s, eps);
  return svd.matrixU() * ratio.asDiagonal() * svd.matrixV().transpose();
}

/// Truncated SVD keeping the p largest singular values (Eckart-Young).
inline Matrix best_rank_p_approx(const Eigen::Ref<const Matrix>& m, Index p) {
  detail::require(p >= 0, "rank must be non-negative, got ", p);
  detail::require_finite(m, "best_rank_p_approx");
  const Index r = std::min(m.rows(), m.cols());
  if (p >= r) return m;
  if (p == 0) return Matrix::Zero(m.rows(), m.cols());
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU().leftCols(p) * svd.singularValues().head(p).asDiagonal() *
         svd.matrixV().leftCols(p).transpose();
}

inline constexpr double kRankRelTol = 1e-8;

/// Count of singular values above rel_tol * s_max.
inline Index numerical_rank(const Eigen::Ref<const Matrix>& m, double rel_tol = kRankRelTol) {
  const SingularSpectrum s = singular_values(m);
  const double cutoff = rel_tol * s.max();
  Index rank = 0;
  for (double sigma : s.values)
    if (sigma > cutoff && sigma > 0.0) ++rank;
  return rank;
}

/// Numerical rank of M_ij = predictor(xs[i], ys[j]). Any sampled matrix has
/// rank at most rank(f), so this is a lower bound on the rank of the function.
template <typename Predictor, typename X, typename Y>
Index empirical_rank(Predictor&& predictor, std::span<const X> xs, std::span<const Y> ys,
                     double rel_tol = kRankRelTol) {
  Matrix m(static_cast<Index>(xs.size()), static_cast<Index>(ys.size()));
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < ys.size(); ++j)
      m(static_cast<Index>(i), static_cast<Index>(j)) = predictor(xs[i], ys[j]);
  return numerical_rank(m, rel_tol);
}

}  // namespace gmc
