#pragma once

// Limited-memory BFGS with a backtracking (Armijo) line search. Accepted
// iterates never increase the objective.

#include <gmc/common.hpp>

#include <deque>
#include <string_view>
#include <vector>

namespace gmc {

enum class StopReason { kGradientTolerance, kMaxIterations, kLineSearchStalled };

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::kGradientTolerance:
      return "gradient_tolerance";
    case StopReason::kMaxIterations:
      return "max_iterations";
    case StopReason::kLineSearchStalled:
      return "line_search_stalled";
  }
  return "unknown";
}

struct LbfgsOptions {
  int max_iter = 500;
  double grad_tol = 1e-6;
  int history = 10;
  double armijo = 1e-4;
  double shrink = 0.5;
  int max_backtracks = 60;
  /// Stop as stalled after this many consecutive accepted steps whose
  /// relative decrease is below stall_rel_decrease and which did not halve
  /// the gradient norm.
  int stall_iterations = 10;
  double stall_rel_decrease = 1e-14;
};

struct LbfgsResult {
  Vector x;
  double value = 0.0;
  double grad_inf_norm = 0.0;
  int iterations = 0;
  StopReason reason = StopReason::kMaxIterations;
  /// Objective at the start point followed by each accepted iterate.
  std::vector<double> trace;
};

/// Minimizes f, where f(x, grad) returns the value and writes the gradient.
template <typename Objective>
LbfgsResult minimize_lbfgs(Objective&& f, Vector x, const LbfgsOptions& opt) {
  detail::require(opt.max_iter >= 1, "max_iter must be at least 1");
  detail::require(opt.grad_tol > 0.0, "grad_tol must be positive");

  LbfgsResult res;
  Vector g(x.size());
  double fx = f(x, g);
  if (!std::isfinite(fx) || !g.allFinite()) throw NumericalError("objective is not finite at the initial iterate");
  res.trace.push_back(fx);

  std::deque<Vector> s_hist, y_hist;
  std::deque<double> rho_hist;
  Vector x_new(x.size()), g_new(x.size()), d(x.size());
  std::vector<double> alpha_buf;

  int it = 0;
  int flat = 0;
  double flat_gnorm = 0.0;
  for (;;) {
    const double gnorm = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
    if (gnorm <= opt.grad_tol) {
      res.reason = StopReason::kGradientTolerance;
      break;
    }
    if (it >= opt.max_iter) {
      res.reason = StopReason::kMaxIterations;
      break;
    }

    // Two-loop recursion.
    d = -g;
    const std::size_t m = s_hist.size();
    alpha_buf.assign(m, 0.0);
    for (std::size_t k = m; k-- > 0;) {
      alpha_buf[k] = rho_hist[k] * s_hist[k].dot(d);
      d -= alpha_buf[k] * y_hist[k];
    }
    if (m > 0) d *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t k = 0; k < m; ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(d);
      d += (alpha_buf[k] - beta) * s_hist[k];
    }
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      d = -g;
      slope = -g.squaredNorm();
    }

    double step = (m == 0) ? std::min(1.0, 1.0 / d.cwiseAbs().maxCoeff()) : 1.0;
    bool accepted = false;
    bool saw_finite = false;
    double f_new = fx;
    for (int bt = 0; bt < opt.max_backtracks; ++bt) {
      x_new = x + step * d;
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && g_new.allFinite()) {
        saw_finite = true;
        if (f_new <= fx + opt.armijo * step * slope) {
          accepted = true;
          break;
        }
      }
      step *= opt.shrink;
    }
    if (!accepted) {
      if (!saw_finite) throw NumericalError(detail::concat("objective became non-finite at iterate ", it + 1));
      res.reason = StopReason::kLineSearchStalled;
      break;
    }

    Vector s = x_new - x;
    Vector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (static_cast<int>(s_hist.size()) == opt.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
    }
    const bool no_decrease = fx - f_new <= opt.stall_rel_decrease * std::max(1.0, std::abs(fx));
    x.swap(x_new);
    g.swap(g_new);
    fx = f_new;
    res.trace.push_back(fx);
    ++it;
    const double gn = g.cwiseAbs().maxCoeff();
    if (!no_decrease) {
      flat = 0;
    } else if (flat == 0 || gn < 0.5 * flat_gnorm) {
      flat = 1;
      flat_gnorm = gn;
    } else if (++flat >= opt.stall_iterations && gn > opt.grad_tol) {
      res.reason = StopReason::kLineSearchStalled;
      break;
    }
  }

  res.x = std::move(x);
  res.value = fx;
  res.grad_inf_norm = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
  res.iterations = it;
  return res;
}

/// Conjugate gradient for the quadratic q(x) = x'Hx/2 - b'x where H is
/// symmetric positive semidefinite and given as a product hv(v) -> H v.
/// Stops when |Hx - b|_inf <= tol.
template <typename HessVec>
Vector conjugate_gradient(HessVec&& hv, const Vector& b, Vector x, double tol, int max_iter) {
  Vector r = b - hv(x);
  Vector p = r;
  double rr = r.squaredNorm();
  for (int it = 0; it < max_iter; ++it) {
    if (r.cwiseAbs().maxCoeff() <= tol) break;
    const Vector hp = hv(p);
    const double php = p.dot(hp);
    if (!(php > 0.0)) break;
    const double a = rr / php;
    x += a * p;
    // Recompute the residual periodically to limit drift.
    if ((it + 1) % 50 == 0) {
      r = b - hv(x);
    } else {
      r -= a * hp;
    }
    const double rr_new = r.squaredNorm();
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  return x;
}

}  // namespace gmc
