#pragma once

// Convex formulations over the product kernel k(x,x') g(y,y'):
//  * kernel ridge regression on observed pairs (dual vector a, one entry per
//    observation), and
//  * the full-matrix problem in gamma with predictions F = K gamma G and a
//    smoothed trace-norm penalty on F.

#include <gmc/common.hpp>
#include <gmc/kernels.hpp>
#include <gmc/lbfgs.hpp>
#include <gmc/lowrank.hpp>
#include <gmc/observations.hpp>

#include <Eigen/Cholesky>

#include <vector>

namespace gmc {

struct DualCoefficients {
  Vector a;
};

struct GammaModel {
  Matrix gamma;
};

struct TraceFitConfig {
  double mu = 0.0;
  double lambda = 1e-3;
  double eps = 1e-3;
  int max_iter = 5000;
  double grad_tol = 1e-8;
  /// Upper bound on n_rows * n_cols; the parameter count grows with the grid.
  Index max_parameters = 250000;
  bool allow_large = false;

  void validate() const {
    detail::require(mu >= 0.0, "mu must be non-negative, got ", mu);
    detail::require(lambda > 0.0, "lambda must be positive, got ", lambda);
    detail::require(eps > 0.0, "eps must be positive, got ", eps);
    detail::require(max_iter >= 1, "max_iter must be at least 1");
    detail::require(grad_tol > 0.0, "grad_tol must be positive");
  }
};

/// 1e-3 times the largest absolute target.
inline double default_trace_eps(const ObservationSet& obs) {
  double m = 0.0;
  for (const auto& t : obs) m = std::max(m, std::abs(t.target));
  return m > 0.0 ? 1e-3 * m : 1e-3;
}

struct TraceFitResult {
  GammaModel model;
  double objective = 0.0;
  double grad_inf_norm = 0.0;
  int iterations = 0;
  StopReason reason = StopReason::kMaxIterations;
  std::vector<double> objective_trace;
};

namespace detail {

inline void check_kernel_grid(const Eigen::Ref<const Matrix>& k, const Eigen::Ref<const Matrix>& g,
                              const ObservationSet& obs) {
  require(k.rows() == k.cols() && g.rows() == g.cols(), "kernels must be square, got ", shape(k), " and ",
          shape(g));
  require(obs.n_rows() == k.rows() && obs.n_cols() == g.rows(), "observation grid ", obs.n_rows(), "x",
          obs.n_cols(), " does not match kernels ", shape(k), " and ", shape(g));
}

// Observed-pair Gram matrix: K[i(u), i(v)] * G[j(u), j(v)].
inline Matrix observed_product_gram(const Eigen::Ref<const Matrix>& k, const Eigen::Ref<const Matrix>& g,
                                    const ObservationSet& obs) {
  const auto& t = obs.triplets();
  const auto n = static_cast<Index>(t.size());
  Matrix out(n, n);
  for (Index v = 0; v < n; ++v)
    for (Index u = 0; u < n; ++u) out(u, v) = k(t[u].row, t[v].row) * g(t[u].col, t[v].col);
  return out;
}

inline double trace_eval(const Eigen::Ref<const Matrix>& gamma, const Eigen::Ref<const Matrix>& k,
                         const Eigen::Ref<const Matrix>& g, const ObservationSet& obs, const TraceFitConfig& cfg,
                         Matrix* grad) {
  const Matrix kg = k * gamma;
  const Matrix f = kg * g;
  const double n = static_cast<double>(obs.size());
  double loss = 0.0;
  Vector resid(static_cast<Index>(obs.size()));
  Index u = 0;
  for (const auto& t : obs) {
    loss += SquareLoss::value(f(t.row, t.col), t.target);
    resid(u++) = SquareLoss::derivative(f(t.row, t.col), t.target) / n;
  }
  const double reg = gamma.cwiseProduct(f).sum();  // tr(gamma^T K gamma G)
  double value = loss / n + cfg.lambda * reg;

  Matrix penalty_grad;
  if (cfg.mu > 0.0) {
    Eigen::BDCSVD<Matrix> svd(f, grad ? (Eigen::ComputeThinU | Eigen::ComputeThinV) : 0);
    Vector s = svd.singularValues().cwiseMax(0.0);
    double smooth = 0.0;
    for (double sigma : s) smooth += std::hypot(sigma, cfg.eps);
    value += cfg.mu * smooth;
    if (grad) {
      for (double& sigma : s) sigma = sigma / std::hypot(sigma, cfg.eps);
      penalty_grad = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
    }
  }
  if (grad) {
    Matrix inner = SparseGrid{obs, resid}.to_dense() + (2.0 * cfg.lambda) * gamma;
    if (cfg.mu > 0.0) inner += cfg.mu * penalty_grad;
    *grad = k * inner * g;
  }
  return value;
}

inline void check_gamma(const GammaModel& m, const Eigen::Ref<const Matrix>& k, const Eigen::Ref<const Matrix>& g) {
  require(m.gamma.rows() == k.rows() && m.gamma.cols() == g.rows(), "gamma is ", shape(m.gamma), ", expected ",
          k.rows(), "x", g.rows());
  require(m.gamma.allFinite(), "gamma has non-finite entries");
}

}  // namespace detail

/// Solves (K_obs + n lambda I) a = z with K_obs the product-kernel Gram over
/// the observed pairs.
inline DualCoefficients fit_product_ridge(const KernelMatrix& kernel_rows, const KernelMatrix& kernel_cols,
                                          const ObservationSet& obs, double lambda) {
  detail::require(lambda > 0.0, "lambda must be positive, got ", lambda);
  const Matrix& k = kernel_rows.matrix();
  const Matrix& g = kernel_cols.matrix();
  detail::check_kernel_grid(k, g, obs);
  const double n = static_cast<double>(obs.size());
  Matrix system = detail::observed_product_gram(k, g, obs);
  system.diagonal().array() += n * lambda;
  const Vector z = obs.targets();
  Eigen::LDLT<Matrix> ldlt(system);
  if (ldlt.info() != Eigen::Success) throw NumericalError("product ridge system could not be factorized");
  Vector a = ldlt.solve(z);
  // one step of iterative refinement
  a += ldlt.solve(z - system * a);
  const double resid = (system * a - z).cwiseAbs().maxCoeff();
  if (!a.allFinite() || !(resid <= 1e-6 * std::max(1.0, z.cwiseAbs().maxCoeff())))
    throw NumericalError(detail::concat("product ridge system is singular (residual ", resid, ")"));
  return {std::move(a)};
}

/// Fitted values K_obs a at the observed pairs.
inline Vector product_ridge_fitted(const DualCoefficients& coeffs, const KernelMatrix& kernel_rows,
                                   const KernelMatrix& kernel_cols, const ObservationSet& obs) {
  detail::require(coeffs.a.size() == static_cast<Index>(obs.size()), "coefficient length ", coeffs.a.size(),
                  " does not match ", obs.size(), " observations");
  return detail::observed_product_gram(kernel_rows.matrix(), kernel_cols.matrix(), obs) * coeffs.a;
}

/// Grid of predictions sum_u a_u k(x_i(u), x_q) g(y_j(u), y_r) for query rows
/// q (columns of k_eval, n_rows x m) and query columns r (columns of g_eval,
/// n_cols x m'). Equivalent to K_eval^T A G_eval with A the sparse grid of a.
inline Matrix product_ridge_predict(const DualCoefficients& coeffs, const ObservationSet& obs,
                                    const Eigen::Ref<const Matrix>& k_eval, const Eigen::Ref<const Matrix>& g_eval) {
  detail::require(coeffs.a.size() == static_cast<Index>(obs.size()), "coefficient length ", coeffs.a.size(),
                  " does not match ", obs.size(), " observations");
  detail::require(k_eval.rows() == obs.n_rows() && g_eval.rows() == obs.n_cols(), "evaluation kernels ",
                  detail::shape(k_eval), " and ", detail::shape(g_eval), " do not match the ", obs.n_rows(), "x",
                  obs.n_cols(), " training grid");
  const Matrix kt_a = detail::SparseGrid{obs, coeffs.a}.transpose_times(k_eval).transpose();  // m x n_cols
  return kt_a * g_eval;
}

/// (1/n) sum_u (F_u - z_u)^2 + mu * smoothed_trace_norm(F, eps) + lambda tr(gamma^T K gamma G), F = K gamma G.
inline double trace_objective(const GammaModel& model, const Eigen::Ref<const Matrix>& k,
                              const Eigen::Ref<const Matrix>& g, const ObservationSet& obs,
                              const TraceFitConfig& config) {
  config.validate();
  detail::check_kernel_grid(k, g, obs);
  detail::check_gamma(model, k, g);
  return detail::trace_eval(model.gamma, k, g, obs, config, nullptr);
}

/// K R G + mu K D(K gamma G) G + 2 lambda K gamma G, with D the smoothed
/// trace-norm gradient.
inline Matrix trace_gradient(const GammaModel& model, const Eigen::Ref<const Matrix>& k,
                             const Eigen::Ref<const Matrix>& g, const ObservationSet& obs,
                             const TraceFitConfig& config) {
  config.validate();
  detail::check_kernel_grid(k, g, obs);
  detail::check_gamma(model, k, g);
  Matrix grad;
  detail::trace_eval(model.gamma, k, g, obs, config, &grad);
  return grad;
}

inline Matrix predict_matrix(const GammaModel& model, const Eigen::Ref<const Matrix>& k,
                             const Eigen::Ref<const Matrix>& g) {
  detail::check_gamma(model, k, g);
  return k * model.gamma * g;
}

inline Matrix predict_new(const GammaModel& model, const Eigen::Ref<const Matrix>& k_cross,
                          const Eigen::Ref<const Matrix>& g_cross) {
  detail::require(k_cross.rows() == model.gamma.rows() && g_cross.rows() == model.gamma.cols(),
                  "cross kernels do not match gamma ", detail::shape(model.gamma));
  return k_cross.transpose() * model.gamma * g_cross;
}

/// Quasi-Newton descent on the smoothed convex objective, starting at gamma = 0.
inline TraceFitResult fit_trace_norm(const KernelMatrix& kernel_rows, const KernelMatrix& kernel_cols,
                                     const ObservationSet& obs, const TraceFitConfig& config) {
  config.validate();
  const Matrix& k = kernel_rows.matrix();
  const Matrix& g = kernel_cols.matrix();
  detail::check_kernel_grid(k, g, obs);
  const Index nx = k.rows();
  const Index ny = g.rows();
  detail::require(config.allow_large || nx * ny <= config.max_parameters, "trace-norm fit has ", nx * ny,
                  " parameters, above the limit of ", config.max_parameters, "; set allow_large to override");

  auto f = [&](const Vector& x, Vector& grad) {
    const Eigen::Map<const Matrix> gamma(x.data(), nx, ny);
    Matrix gm;
    const double v = detail::trace_eval(gamma, k, g, obs, config, &gm);
    grad = Eigen::Map<const Vector>(gm.data(), gm.size());
    return v;
  };
  LbfgsOptions opt;
  opt.max_iter = config.max_iter;
  opt.grad_tol = config.grad_tol;
  opt.history = 20;
  LbfgsResult r = minimize_lbfgs(f, Vector::Zero(nx * ny), opt);

  TraceFitResult out;
  out.model.gamma = Eigen::Map<const Matrix>(r.x.data(), nx, ny);
  out.objective = r.value;
  out.grad_inf_norm = r.grad_inf_norm;
  out.iterations = r.iterations;
  out.reason = r.reason;
  out.objective_trace = std::move(r.trace);
  return out;
}

}  // namespace gmc
