#pragma once

// Rank-constrained learning in the tensor-product RKHS. The predictor is
//   f(x, y) = sum_k u_k(x) v_k(y),  u_k = sum_l alpha_lk k(x_l, .),
//                                   v_k = sum_l beta_lk  g(y_l, .),
// so the grid of predictions is F = K alpha beta^T G and the squared RKHS norm
// is tr(gamma^T K gamma G) with gamma = alpha beta^T.

#include <gmc/common.hpp>
#include <gmc/kernels.hpp>
#include <gmc/lbfgs.hpp>
#include <gmc/observations.hpp>

#include <random>
#include <utility>
#include <vector>

namespace gmc {

struct FactorModel {
  Matrix alpha;  // n_rows x p
  Matrix beta;   // n_cols x p

  Index rank() const { return alpha.cols(); }

  void validate() const {
    detail::require(alpha.cols() == beta.cols(), "alpha and beta column counts differ: ", alpha.cols(), " vs ",
                    beta.cols());
    detail::require(alpha.cols() >= 1, "factor model rank must be at least 1");
    detail::require(alpha.allFinite() && beta.allFinite(), "factor model has non-finite coefficients");
  }

  /// gamma = alpha beta^T, the full coefficient matrix.
  Matrix gamma() const { return alpha * beta.transpose(); }
};

enum class FitStrategy { kJoint, kAlternating };

struct FitConfig {
  Index p = 1;
  double lambda = 0.0;
  FitStrategy strategy = FitStrategy::kJoint;
  int max_iter = 500;
  double grad_tol = 1e-6;
  std::uint64_t seed = 0;
  double init_scale = 0.1;

  void validate() const {
    detail::require(p >= 1, "rank p must be at least 1, got ", p);
    detail::require(lambda >= 0.0, "lambda must be non-negative, got ", lambda);
    detail::require(max_iter >= 1, "max_iter must be at least 1");
    detail::require(grad_tol > 0.0, "grad_tol must be positive");
    detail::require(init_scale > 0.0, "init_scale must be positive");
  }
};

struct FactorGradient {
  Matrix alpha;
  Matrix beta;

  double inf_norm() const {
    return std::max(alpha.size() ? alpha.cwiseAbs().maxCoeff() : 0.0, beta.size() ? beta.cwiseAbs().maxCoeff() : 0.0);
  }
};

struct FitResult {
  FactorModel model;
  double objective = 0.0;
  double grad_inf_norm = 0.0;
  int iterations = 0;
  StopReason reason = StopReason::kMaxIterations;
  std::vector<double> objective_trace;
};

namespace detail {

inline void check_factor_shapes(const FactorModel& m, const Eigen::Ref<const Matrix>& k,
                                const Eigen::Ref<const Matrix>& g) {
  m.validate();
  require(k.rows() == k.cols() && k.rows() == m.alpha.rows(), "K is ", shape(k), " but alpha has ", m.alpha.rows(),
          " rows");
  require(g.rows() == g.cols() && g.rows() == m.beta.rows(), "G is ", shape(g), " but beta has ", m.beta.rows(),
          " rows");
}

inline void check_obs_shapes(const Eigen::Ref<const Matrix>& k, const Eigen::Ref<const Matrix>& g,
                             const ObservationSet& obs) {
  require(obs.n_rows() == k.rows() && obs.n_cols() == g.rows(), "observation grid ", obs.n_rows(), "x",
          obs.n_cols(), " does not match kernels ", shape(k), " and ", shape(g));
}

// Predictions at observed cells given KA = K alpha and GB = G beta.
inline Vector observed_predictions(const Eigen::Ref<const Matrix>& ka, const Eigen::Ref<const Matrix>& gb,
                                   const ObservationSet& obs) {
  Vector f(static_cast<Index>(obs.size()));
  Index u = 0;
  for (const auto& t : obs) f(u++) = ka.row(t.row).dot(gb.row(t.col));
  return f;
}

struct FactorEval {
  double value = 0.0;
  FactorGradient grad;
};

inline FactorEval evaluate_factor(const Eigen::Ref<const Matrix>& alpha, const Eigen::Ref<const Matrix>& beta,
                                  const Eigen::Ref<const Matrix>& k,
                                  const Eigen::Ref<const Matrix>& g, const ObservationSet& obs, double lambda,
                                  bool with_gradient) {
  const Matrix ka = k * alpha;
  const Matrix gb = g * beta;
  const Vector f = observed_predictions(ka, gb, obs);
  const double n = static_cast<double>(obs.size());
  double loss = 0.0;
  Vector resid(f.size());
  Index u = 0;
  for (const auto& t : obs) {
    loss += SquareLoss::value(f(u), t.target);
    resid(u) = SquareLoss::derivative(f(u), t.target) / n;
    ++u;
  }
  const Matrix a2 = alpha.transpose() * ka;  // alpha^T K alpha
  const Matrix b2 = beta.transpose() * gb;   // beta^T G beta
  FactorEval out;
  out.value = loss / n + lambda * a2.cwiseProduct(b2).sum();
  if (with_gradient) {
    const SparseGrid r{obs, resid};
    out.grad.alpha = k * r.times(gb) + (2.0 * lambda) * ka * b2;
    out.grad.beta = g * r.transpose_times(ka) + (2.0 * lambda) * gb * a2;
  }
  return out;
}

inline Vector pack(const Matrix& a, const Matrix& b) {
  Vector x(a.size() + b.size());
  x.head(a.size()) = Eigen::Map<const Vector>(a.data(), a.size());
  x.tail(b.size()) = Eigen::Map<const Vector>(b.data(), b.size());
  return x;
}

// Minimizes the objective over alpha with beta fixed, by conjugate gradient
// on the (convex quadratic) subproblem, starting from alpha0.
inline Matrix solve_alpha(const Eigen::Ref<const Matrix>& k, const Eigen::Ref<const Matrix>& g,
                          const Matrix& alpha0, const Matrix& beta, const ObservationSet& obs, double lambda,
                          double tol, int max_iter) {
  const Index nx = alpha0.rows();
  const Index p = alpha0.cols();
  const Matrix gb = g * beta;
  const Matrix b2 = beta.transpose() * gb;
  const double n = static_cast<double>(obs.size());

  Vector zw(static_cast<Index>(obs.size()));
  {
    Index u = 0;
    for (const auto& t : obs) zw(u++) = 2.0 * t.target / n;
  }
  const Matrix rhs = k * SparseGrid{obs, zw}.times(gb);

  auto hv = [&](const Vector& v) -> Vector {
    const Eigen::Map<const Matrix> d(v.data(), nx, p);
    const Matrix kd = k * d;
    Vector w = observed_predictions(kd, gb, obs) * (2.0 / n);
    Matrix out = k * SparseGrid{obs, w}.times(gb) + (2.0 * lambda) * kd * b2;
    return Eigen::Map<const Vector>(out.data(), out.size());
  };
  const Vector b = Eigen::Map<const Vector>(rhs.data(), rhs.size());
  const Vector x0 = Eigen::Map<const Vector>(alpha0.data(), alpha0.size());
  const Vector x = conjugate_gradient(hv, b, x0, tol, max_iter);
  return Eigen::Map<const Matrix>(x.data(), nx, p);
}

inline int default_cg_iterations(Index dim) { return static_cast<int>(std::min<Index>(20 * dim + 100, 200000)); }

}  // namespace detail

/// F = K alpha beta^T G over the training grid.
inline Matrix predict_matrix(const FactorModel& model, const Eigen::Ref<const Matrix>& k,
                             const Eigen::Ref<const Matrix>& g) {
  detail::check_factor_shapes(model, k, g);
  return (k * model.alpha) * (g * model.beta).transpose();
}

inline Matrix predict_matrix(const FactorModel& model, const KernelMatrix& k, const KernelMatrix& g) {
  return predict_matrix(model, k.matrix(), g.matrix());
}

/// Predictions for new row / column entities: K_cross^T alpha beta^T G_cross,
/// where K_cross is n_rows x m and G_cross is n_cols x q.
inline Matrix predict_new(const FactorModel& model, const Eigen::Ref<const Matrix>& k_cross,
                          const Eigen::Ref<const Matrix>& g_cross) {
  model.validate();
  detail::require(k_cross.rows() == model.alpha.rows(), "row cross kernel has ", k_cross.rows(),
                  " training rows, model has ", model.alpha.rows());
  detail::require(g_cross.rows() == model.beta.rows(), "column cross kernel has ", g_cross.rows(),
                  " training rows, model has ", model.beta.rows());
  return (k_cross.transpose() * model.alpha) * (g_cross.transpose() * model.beta).transpose();
}

/// (1/n) sum_u (F_{i(u) j(u)} - z_u)^2 + lambda sum_ij (a_i'K a_j)(b_i'G b_j).
inline double objective(const FactorModel& model, const Eigen::Ref<const Matrix>& k,
                        const Eigen::Ref<const Matrix>& g, const ObservationSet& obs, double lambda) {
  detail::require(lambda >= 0.0, "lambda must be non-negative, got ", lambda);
  detail::check_factor_shapes(model, k, g);
  detail::check_obs_shapes(k, g, obs);
  return detail::evaluate_factor(model.alpha, model.beta, k, g, obs, lambda, false).value;
}

/// With R holding (2/n)(F - z) at observed cells:
///   d/d alpha = K R G beta + 2 lambda K alpha (beta' G beta)
///   d/d beta  = G R^T K alpha + 2 lambda G beta (alpha' K alpha)
inline FactorGradient gradient(const FactorModel& model, const Eigen::Ref<const Matrix>& k,
                               const Eigen::Ref<const Matrix>& g, const ObservationSet& obs, double lambda) {
  detail::require(lambda >= 0.0, "lambda must be non-negative, got ", lambda);
  detail::check_factor_shapes(model, k, g);
  detail::check_obs_shapes(k, g, obs);
  return detail::evaluate_factor(model.alpha, model.beta, k, g, obs, lambda, true).grad;
}

/// Seeded Gaussian start with standard deviation init_scale / sqrt(p).
inline FactorModel initial_model(Index n_rows, Index n_cols, const FitConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, config.init_scale / std::sqrt(static_cast<double>(config.p)));
  FactorModel m{Matrix(n_rows, config.p), Matrix(n_cols, config.p)};
  for (Index j = 0; j < config.p; ++j)
    for (Index i = 0; i < n_rows; ++i) m.alpha(i, j) = normal(rng);
  for (Index j = 0; j < config.p; ++j)
    for (Index i = 0; i < n_cols; ++i) m.beta(i, j) = normal(rng);
  return m;
}

/// Minimizes the rank-p objective from a seeded random start, either jointly
/// (quasi-Newton) or by alternating exact minimization over alpha and beta.
inline FitResult fit(const KernelMatrix& kernel_rows, const KernelMatrix& kernel_cols, const ObservationSet& obs,
                     const FitConfig& config) {
  config.validate();
  const Matrix& k = kernel_rows.matrix();
  const Matrix& g = kernel_cols.matrix();
  detail::check_obs_shapes(k, g, obs);
  const Index nx = k.rows();
  const Index ny = g.rows();
  const Index p = config.p;

  FitResult out;
  FactorModel start = initial_model(nx, ny, config);

  if (config.strategy == FitStrategy::kJoint) {
    auto f = [&](const Vector& x, Vector& grad) {
      const Eigen::Map<const Matrix> a(x.data(), nx, p);
      const Eigen::Map<const Matrix> b(x.data() + nx * p, ny, p);
      auto e = detail::evaluate_factor(a, b, k, g, obs, config.lambda, true);
      grad = detail::pack(e.grad.alpha, e.grad.beta);
      return e.value;
    };
    LbfgsOptions opt;
    opt.max_iter = config.max_iter;
    opt.grad_tol = config.grad_tol;
    LbfgsResult r = minimize_lbfgs(f, detail::pack(start.alpha, start.beta), opt);
    out.model.alpha = Eigen::Map<const Matrix>(r.x.data(), nx, p);
    out.model.beta = Eigen::Map<const Matrix>(r.x.data() + nx * p, ny, p);
    out.objective = r.value;
    out.grad_inf_norm = r.grad_inf_norm;
    out.iterations = r.iterations;
    out.reason = r.reason;
    out.objective_trace = std::move(r.trace);
    return out;
  }

  // Alternating: each half-step is a convex quadratic solved by CG.
  const ObservationSet obs_t = obs.transposed();
  FactorModel m = std::move(start);
  auto eval = detail::evaluate_factor(m.alpha, m.beta, k, g, obs, config.lambda, true);
  if (!std::isfinite(eval.value)) throw NumericalError("objective is not finite at the initial iterate");
  out.objective_trace.push_back(eval.value);
  const double inner_tol = 0.1 * config.grad_tol;
  int it = 0;
  out.reason = StopReason::kMaxIterations;
  while (true) {
    if (eval.grad.inf_norm() <= config.grad_tol) {
      out.reason = StopReason::kGradientTolerance;
      break;
    }
    if (it >= config.max_iter) break;
    const double before = eval.value;
    Matrix alpha = detail::solve_alpha(k, g, m.alpha, m.beta, obs, config.lambda, inner_tol,
                                       detail::default_cg_iterations(nx * p));
    Matrix beta = detail::solve_alpha(g, k, m.beta, alpha, obs_t, config.lambda, inner_tol,
                                      detail::default_cg_iterations(ny * p));
    auto next = detail::evaluate_factor(alpha, beta, k, g, obs, config.lambda, true);
    ++it;
    if (!std::isfinite(next.value)) throw NumericalError(detail::concat("objective became non-finite at iterate ", it));
    if (next.value > before) {
      // Rounding in the inner solves; keep the previous iterate.
      out.reason = StopReason::kLineSearchStalled;
      break;
    }
    m.alpha = std::move(alpha);
    m.beta = std::move(beta);
    eval = std::move(next);
    out.objective_trace.push_back(eval.value);
    if (before - eval.value <= 1e-15 * std::max(1.0, std::abs(before)) &&
        eval.grad.inf_norm() > config.grad_tol) {
      out.reason = StopReason::kLineSearchStalled;
      break;
    }
  }
  out.model = std::move(m);
  out.objective = eval.value;
  out.grad_inf_norm = eval.grad.inf_norm();
  out.iterations = it;
  return out;
}

/// min over alpha of the objective with beta fixed. Requires lambda > 0; the
/// inner problem is a convex quadratic, solved to gradient tolerance 1e-9.
inline double optimal_alpha_value(const KernelMatrix& kernel_rows, const KernelMatrix& kernel_cols,
                                  const Eigen::Ref<const Matrix>& beta, const ObservationSet& obs, double lambda) {
  detail::require(lambda > 0.0, "optimal_alpha_value needs lambda > 0, got ", lambda);
  const Matrix& k = kernel_rows.matrix();
  const Matrix& g = kernel_cols.matrix();
  detail::check_obs_shapes(k, g, obs);
  detail::require(beta.rows() == g.rows() && beta.cols() >= 1, "beta must be ", g.rows(), "xp, got ",
                  detail::shape(beta));
  const Matrix b = beta;
  const Matrix alpha0 = Matrix::Zero(k.rows(), b.cols());
  const Matrix alpha =
      detail::solve_alpha(k, g, alpha0, b, obs, lambda, 1e-9, detail::default_cg_iterations(alpha0.size()));
  return detail::evaluate_factor(alpha, b, k, g, obs, lambda, false).value;
}

}  // namespace gmc
