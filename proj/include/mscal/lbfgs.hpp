#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>

#include "mscal/types.hpp"

namespace mscal {

struct LbfgsOptions {
  int max_iterations = 300;
  int memory = 8;
  double fd_step = 1e-5;           // central-difference step on the working scale
  double rel_tol = 1e-8;           // relative objective change threshold
  int stall_iterations = 5;        // consecutive small changes before stopping
  double grad_tol = 1e-10;
  int max_line_search = 40;
};

struct LbfgsResult {
  Vec x;
  double f = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  std::string message;
};

// Low-storage quasi-Newton minimizer (two-loop recursion) with backtracking
// Armijo line search and finite-difference gradients. Objectives may return
// +inf (or throw) at infeasible points; such steps are simply rejected.
inline LbfgsResult lbfgs_minimize(const std::function<double(const Vec&)>& objective, Vec x0,
                                  const LbfgsOptions& opt = {}) {
  const auto safe_eval = [&](const Vec& x) -> double {
    try {
      const double v = objective(x);
      return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    } catch (...) {
      return std::numeric_limits<double>::infinity();
    }
  };

  const int dim = static_cast<int>(x0.size());
  const auto gradient = [&](const Vec& x, Vec& g) -> bool {
    g.resize(dim);
    for (int i = 0; i < dim; ++i) {
      Vec xp = x, xm = x;
      xp[i] += opt.fd_step;
      xm[i] -= opt.fd_step;
      const double fp = safe_eval(xp), fm = safe_eval(xm);
      if (!std::isfinite(fp) || !std::isfinite(fm)) return false;
      g[i] = (fp - fm) / (2.0 * opt.fd_step);
    }
    return true;
  };

  LbfgsResult res;
  res.x = std::move(x0);
  res.f = safe_eval(res.x);
  if (!std::isfinite(res.f)) {
    res.message = "objective not finite at start";
    return res;
  }

  Vec g;
  if (!gradient(res.x, g)) {
    res.message = "gradient not finite at start";
    return res;
  }

  std::deque<Vec> s_hist, y_hist;
  std::deque<double> rho_hist;
  int stall = 0;

  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    res.iterations = iter + 1;
    if (g.norm() < opt.grad_tol) {
      res.converged = true;
      res.message = "gradient norm below tolerance";
      return res;
    }

    // Two-loop recursion for the search direction.
    Vec q = g;
    std::deque<double> alpha;
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      const double a = rho_hist[i] * s_hist[i].dot(q);
      alpha.push_front(a);
      q -= a * y_hist[i];
    }
    if (!s_hist.empty()) {
      const double gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double b = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - b) * s_hist[i];
    }
    Vec direction = -q;
    double slope = g.dot(direction);
    if (!(slope < 0.0)) {  // not a descent direction, reset to steepest descent
      direction = -g;
      slope = -g.squaredNorm();
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }
    if (s_hist.empty()) {
      // no curvature information yet: keep the first trial step bounded
      const double norm = direction.norm();
      if (norm > 1.0) {
        direction /= norm;
        slope /= norm;
      }
    }

    // Backtracking Armijo search.
    double step = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    Vec x_new;
    bool ok = false;
    for (int ls = 0; ls < opt.max_line_search; ++ls) {
      x_new = res.x + step * direction;
      f_new = safe_eval(x_new);
      if (std::isfinite(f_new) && f_new <= res.f + 1e-4 * step * slope) {
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok) {
      res.message = "line search failed";
      return res;
    }

    Vec g_new;
    if (!gradient(x_new, g_new)) {
      res.x = std::move(x_new);
      res.f = f_new;
      res.message = "gradient not finite near optimum";
      return res;
    }

    const Vec s = x_new - res.x;
    const Vec y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opt.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }

    const double rel_change = std::abs(res.f - f_new) / (std::abs(res.f) + 1.0);
    stall = rel_change < opt.rel_tol ? stall + 1 : 0;
    res.x = std::move(x_new);
    res.f = f_new;
    g = std::move(g_new);
    if (stall >= opt.stall_iterations) {
      res.converged = true;
      res.message = "objective change below tolerance";
      return res;
    }
  }
  res.message = "iteration limit reached";
  return res;
}

}  // namespace mscal
