#pragma once

// Self-checks run by `gmc diagnostics`: Kronecker identities, trace-norm
// identities, gradient checks against central differences, sampled-rank
// characterization and midpoint convexity of the partially minimized
// objective in the row kernel. Each check reports its worst observed error.

#include <gmc/common.hpp>
#include <gmc/convex.hpp>
#include <gmc/fixed_rank.hpp>
#include <gmc/kernels.hpp>
#include <gmc/lowrank.hpp>
#include <gmc/numdiff.hpp>

#include <chrono>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace gmc::diagnostics {

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  int trials = 0;
  double seconds = 0.0;
  std::string detail;
};

using FactorGradientFn = std::function<FactorGradient(const FactorModel&, const Matrix&, const Matrix&,
                                                      const ObservationSet&, double)>;
using TraceGradientFn = std::function<Matrix(const GammaModel&, const Matrix&, const Matrix&,
                                             const ObservationSet&, const TraceFitConfig&)>;

/// Seeded generators for small random instances.
class RandomInstances {
 public:
  explicit RandomInstances(std::uint64_t seed) : rng_(seed) {}

  Matrix uniform(Index r, Index c, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Index j = 0; j < c; ++j)
      for (Index i = 0; i < r; ++i) m(i, j) = u(rng_);
    return m;
  }

  Matrix gaussian(Index r, Index c) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (Index j = 0; j < c; ++j)
      for (Index i = 0; i < r; ++i) m(i, j) = n(rng_);
    return m;
  }

  /// B B^T / n + shift I, symmetric to the last bit.
  Matrix psd(Index n, double shift = 0.0) {
    const Matrix b = uniform(n, n);
    Matrix k = b * b.transpose() / static_cast<double>(n);
    k = 0.5 * (k + k.transpose()).eval();
    k.diagonal().array() += shift;
    return k;
  }

  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  Index integer(Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng_); }

  /// Entities with random 0/1 features (never all zero).
  std::vector<Entity> binary_entities(Index n, Index dim, EntityId first_id = 0) {
    std::bernoulli_distribution coin(0.5);
    std::vector<Entity> out;
    for (Index i = 0; i < n; ++i) {
      FeatureVector f(dim);
      for (Index d = 0; d < dim; ++d) f(d) = coin(rng_) ? 1.0 : 0.0;
      if (f.sum() == 0.0) f(integer(0, dim - 1)) = 1.0;
      out.push_back({first_id + static_cast<EntityId>(i), std::move(f)});
    }
    return out;
  }

  /// Random subset of an n_rows x n_cols grid (each cell kept with the given
  /// probability, at least one cell) with Gaussian targets.
  ObservationSet observations(Index n_rows, Index n_cols, double keep = 0.6) {
    std::bernoulli_distribution coin(keep);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<Triplet> t;
    for (Index j = 0; j < n_cols; ++j)
      for (Index i = 0; i < n_rows; ++i)
        if (coin(rng_)) t.push_back({i, j, z(rng_)});
    if (t.empty()) t.push_back({0, 0, z(rng_)});
    return ObservationSet(n_rows, n_cols, std::move(t));
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

namespace detail {

using gmc::detail::concat;

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline CheckResult finish(std::string name, double err, double tol, int trials, const Stopwatch& sw,
                          std::string detail = {}) {
  return {std::move(name), err <= tol, err, tol, trials, sw.seconds(), std::move(detail)};
}

inline double max_abs(const Eigen::Ref<const Matrix>& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace detail

/// Mixed product, transpose, inverse and vec identities.
inline std::vector<CheckResult> check_kronecker(std::uint64_t seed, int trials = 50) {
  RandomInstances r(seed);
  std::vector<CheckResult> out;
  {
    detail::Stopwatch sw;
    double err = 0.0;
    for (int t = 0; t < trials; ++t) {
      const Matrix a = r.uniform(2, 3), b = r.uniform(3, 2), c = r.uniform(3, 2), d = r.uniform(2, 2);
      err = std::max(err, detail::max_abs(kron(a, b) * kron(c, d) - kron(a * c, b * d)));
    }
    out.push_back(detail::finish("kron_mixed_product", err, 1e-10, trials, sw));
  }
  {
    detail::Stopwatch sw;
    double err = 0.0;
    for (int t = 0; t < trials; ++t) {
      const Matrix a = r.uniform(2, 3), b = r.uniform(4, 2);
      err = std::max(err, detail::max_abs(kron(a, b).transpose() - kron(a.transpose(), b.transpose())));
    }
    out.push_back(detail::finish("kron_transpose", err, 1e-10, trials, sw));
  }
  {
    detail::Stopwatch sw;
    double err = 0.0;
    for (int t = 0; t < trials; ++t) {
      const Matrix a = r.uniform(3, 3) + 3.0 * Matrix::Identity(3, 3);
      const Matrix b = r.uniform(3, 3) + 3.0 * Matrix::Identity(3, 3);
      err = std::max(err, detail::max_abs(kron(a, b).inverse() - kron(a.inverse(), b.inverse())));
    }
    out.push_back(detail::finish("kron_inverse", err, 1e-10, trials, sw));
  }
  {
    detail::Stopwatch sw;
    double err = 0.0;
    for (int t = 0; t < trials; ++t) {
      const Matrix c = r.uniform(3, 2), x = r.uniform(2, 2), b = r.uniform(3, 2);
      err = std::max(err, (vec(c * x * b.transpose()) - kron(b, c) * vec(x)).cwiseAbs().maxCoeff());
      const Matrix k = r.psd(3), g = r.psd(4), gamma = r.uniform(3, 4);
      err = std::max(err, (vec(k * gamma * g) - kron(g, k) * vec(gamma)).cwiseAbs().maxCoeff());
    }
    out.push_back(detail::finish("vec_identity", err, 1e-10, trials, sw));
  }
  return out;
}

/// Variational form, norm axioms and the smoothed-penalty sandwich.
inline std::vector<CheckResult> check_trace_norm(std::uint64_t seed, int trials = 100) {
  RandomInstances r(seed);
  std::vector<CheckResult> out;
  {
    detail::Stopwatch sw;
    double err = 0.0;
    for (int t = 0; t < trials; ++t) {
      const Matrix m = r.uniform(r.integer(1, 6), r.integer(1, 6));
      err = std::max(err, std::abs(factor_trace_norm(balanced_factorization(m)) - trace_norm(m)));
    }
    out.push_back(detail::finish("trace_norm_balanced_factorization", err, 1e-10, trials, sw));
  }
  {
    detail::Stopwatch sw;
    double violation = 0.0;
    for (int t = 0; t < trials; ++t) {
      const Index p = r.integer(1, 4);
      const FactorPair f{r.gaussian(r.integer(1, 6), p), r.gaussian(p, r.integer(1, 6))};
      violation = std::max(violation, trace_norm(f.product()) - factor_trace_norm(f));
    }
    out.push_back(detail::finish("factor_trace_norm_upper_bound", std::max(violation, 0.0), 1e-10, trials, sw));
  }
  {
    detail::Stopwatch sw;
    double err = 0.0;
    for (int t = 0; t < trials; ++t) {
      const Index rows = r.integer(1, 6), cols = r.integer(1, 6);
      const Matrix a = r.uniform(rows, cols), b = r.uniform(rows, cols);
      const double c = r.real(-3.0, 3.0);
      const double ta = trace_norm(a), tb = trace_norm(b);
      err = std::max(err, trace_norm(a + b) - (ta + tb));
      err = std::max(err, std::abs(trace_norm(c * a) - std::abs(c) * ta));
      err = std::max(err, -ta);
    }
    err = std::max(err, trace_norm(Matrix::Zero(3, 4)));
    out.push_back(detail::finish("trace_norm_axioms", std::max(err, 0.0), 1e-10, trials, sw));
  }
  {
    detail::Stopwatch sw;
    double violation = 0.0;
    for (int t = 0; t < trials; ++t) {
      const Matrix m = r.uniform(r.integer(1, 6), r.integer(1, 6));
      const double tn = trace_norm(m);
      const double rank_bound = static_cast<double>(std::min(m.rows(), m.cols()));
      double prev = -1.0;
      for (double eps : {1e-3, 1e-2, 1e-1}) {
        const double s = smoothed_trace_norm(m, eps);
        violation = std::max(violation, tn - s);
        violation = std::max(violation, s - (tn + rank_bound * eps));
        violation = std::max(violation, prev - s);  // non-decreasing in eps
        prev = s;
      }
    }
    out.push_back(detail::finish("smoothed_trace_norm_sandwich", std::max(violation, 0.0), 1e-10, trials, sw));
  }
  return out;
}

inline FactorGradient default_factor_gradient(const FactorModel& m, const Matrix& k, const Matrix& g,
                                              const ObservationSet& obs, double lambda) {
  return gradient(m, k, g, obs, lambda);
}

inline Matrix default_trace_gradient(const GammaModel& m, const Matrix& k, const Matrix& g,
                                     const ObservationSet& obs, const TraceFitConfig& cfg) {
  return trace_gradient(m, k, g, obs, cfg);
}

/// Analytic rank-p gradient against central differences (step 1e-5).
inline CheckResult check_factor_gradient(std::uint64_t seed, int trials = 24,
                                         const FactorGradientFn& grad_fn = default_factor_gradient) {
  RandomInstances r(seed);
  detail::Stopwatch sw;
  double err = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Index nx = 4, ny = 3, p = 1 + t % 3;
    Matrix k, g;
    if (t % 2 == 0) {
      k = Matrix::Identity(nx, nx);
      g = Matrix::Identity(ny, ny);
    } else {
      k = build_kernel_matrix(KernelSpec::interpolated(r.real(0.1, 0.9)), r.binary_entities(nx, 5)).matrix();
      g = build_kernel_matrix(KernelSpec::interpolated(r.real(0.1, 0.9)), r.binary_entities(ny, 4)).matrix();
    }
    const ObservationSet obs = r.observations(nx, ny);
    const double lambda = r.real(0.01, 1.0);
    const FactorModel m{r.gaussian(nx, p), r.gaussian(ny, p)};
    const FactorGradient a = grad_fn(m, k, g, obs, lambda);
    const Matrix fd_alpha = central_difference(
        [&](const Matrix& x) { return objective(FactorModel{x, m.beta}, k, g, obs, lambda); }, m.alpha);
    const Matrix fd_beta = central_difference(
        [&](const Matrix& x) { return objective(FactorModel{m.alpha, x}, k, g, obs, lambda); }, m.beta);
    Matrix an(nx * p + ny * p, 1), fd(nx * p + ny * p, 1);
    an << a.alpha.reshaped(), a.beta.reshaped();
    fd << fd_alpha.reshaped(), fd_beta.reshaped();
    err = std::max(err, max_relative_error(an, fd));
  }
  return detail::finish("fixed_rank_gradient", err, 1e-5, trials, sw);
}

/// Analytic smoothed trace-norm objective gradient against central differences.
inline CheckResult check_trace_gradient(std::uint64_t seed, int trials = 24,
                                        const TraceGradientFn& grad_fn = default_trace_gradient) {
  RandomInstances r(seed);
  detail::Stopwatch sw;
  double err = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Index nx = 4, ny = 3;
    Matrix k, g;
    if (t % 2 == 0) {
      k = Matrix::Identity(nx, nx);
      g = Matrix::Identity(ny, ny);
    } else {
      k = build_kernel_matrix(KernelSpec::interpolated(r.real(0.1, 0.9)), r.binary_entities(nx, 5)).matrix();
      g = build_kernel_matrix(KernelSpec::interpolated(r.real(0.1, 0.9)), r.binary_entities(ny, 4)).matrix();
    }
    const ObservationSet obs = r.observations(nx, ny);
    TraceFitConfig cfg;
    cfg.mu = r.real(0.1, 1.0);
    cfg.lambda = r.real(0.01, 1.0);
    cfg.eps = 0.1;
    const GammaModel m{r.gaussian(nx, ny)};
    const Matrix a = grad_fn(m, k, g, obs, cfg);
    const Matrix fd = central_difference(
        [&](const Matrix& x) { return trace_objective(GammaModel{x}, k, g, obs, cfg); }, m.gamma);
    err = std::max(err, max_relative_error(a, fd));
  }
  return detail::finish("trace_norm_gradient", err, 1e-5, trials, sw);
}

/// Sampled rank of sum_{k<p} u_k(x) v_k(y) equals p on generic points and
/// never exceeds p.
inline CheckResult check_rank_characterization(std::uint64_t seed, int trials = 20) {
  RandomInstances r(seed);
  detail::Stopwatch sw;
  int failures = 0;
  int runs = 0;
  for (Index p = 1; p <= 3; ++p) {
    // u_k(x) = sin((k+1) x + phase_k), v_k(y) = exp(-(k+1) y) * cos(y + shift_k): independent families
    Vector phase = r.uniform(p, 1, 0.0, 1.0), shift = r.uniform(p, 1, 0.0, 1.0);
    auto f = [&](double x, double y) {
      double s = 0.0;
      for (Index k = 0; k < p; ++k)
        s += std::sin(static_cast<double>(k + 1) * x + phase(k)) * std::exp(-static_cast<double>(k + 1) * y) *
             std::cos(y + shift(k));
      return s;
    };
    for (int t = 0; t < trials; ++t) {
      const Vector xs_v = r.uniform(5, 1, -2.0, 2.0), ys_v = r.uniform(5, 1, 0.0, 1.5);
      const std::vector<double> xs(xs_v.data(), xs_v.data() + 5), ys(ys_v.data(), ys_v.data() + 5);
      const Index rk = empirical_rank(f, std::span<const double>(xs), std::span<const double>(ys));
      ++runs;
      if (rk != p) ++failures;
    }
  }
  return detail::finish("rank_characterization", static_cast<double>(failures), 0.0, runs, sw,
                        detail::concat(failures, " of ", runs, " sampled ranks differed from the atom count"));
}

/// h(K) = min_alpha objective(alpha, beta; K) is convex in K:
/// h((K1+K2)/2) <= (h(K1)+h(K2))/2.
inline CheckResult check_kernel_convexity(std::uint64_t seed, int trials = 20) {
  RandomInstances r(seed);
  detail::Stopwatch sw;
  double violation = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Index nx = 3, ny = 3, p = 2;
    const Matrix k1 = r.psd(nx), k2 = r.psd(nx);
    const KernelMatrix g = KernelMatrix::from_matrix(r.psd(ny, 0.1));
    const Matrix beta = r.gaussian(ny, p);
    const ObservationSet obs = r.observations(nx, ny, 0.7);
    const double lambda = r.real(0.05, 1.0);
    auto h = [&](const Matrix& k) { return optimal_alpha_value(KernelMatrix::from_matrix(k), g, beta, obs, lambda); };
    const Matrix mid = 0.5 * (k1 + k2);
    violation = std::max(violation, h(mid) - 0.5 * (h(k1) + h(k2)));
  }
  return detail::finish("kernel_midpoint_convexity", std::max(violation, 0.0), 1e-7, trials, sw);
}

inline std::vector<CheckResult> run_all(std::uint64_t seed = 20240229) {
  std::vector<CheckResult> out = check_kronecker(seed);
  for (auto& c : check_trace_norm(seed + 1)) out.push_back(std::move(c));
  out.push_back(check_factor_gradient(seed + 2));
  out.push_back(check_trace_gradient(seed + 3));
  out.push_back(check_rank_characterization(seed + 4));
  out.push_back(check_kernel_convexity(seed + 5));
  return out;
}

inline void print_report(std::ostream& os, const std::vector<CheckResult>& checks) {
  for (const auto& c : checks) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "[%s] %-36s max_error=%.3e tol=%.1e trials=%d time=%.3fs", c.passed ? "PASS" : "FAIL",
                  c.name.c_str(), c.max_error, c.tolerance, c.trials, c.seconds);
    os << buf;
    if (!c.detail.empty()) os << "  (" << c.detail << ')';
    os << '\n';
  }
}

inline bool all_passed(const std::vector<CheckResult>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

}  // namespace gmc::diagnostics
