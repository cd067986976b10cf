#pragma once

// Lower-bound constrained L-BFGS (two-metric projection).
//
// Each iteration splits the coordinates into an active set (at the bound with
// the gradient pushing outward) and a free set. The L-BFGS two-loop recursion
// is applied to the free coordinates only, the step is projected back onto
// the box, and an Armijo backtracking search runs along the projection arc.
// Optional projected-gradient polishing steps follow the main loop.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include <Eigen/Dense>

#include "dpmppp/errors.hpp"

namespace dpmppp::optim {

struct BoxLbfgsOptions {
  int memory = 10;
  int max_iters = 500;
  /// Stop when ||projected gradient||_inf < pg_tol * (1 + |f|).
  double pg_tol = 1e-6;
  /// Stop when the relative decrease of f stalls below this.
  double f_tol = 1e-15;
  int polish_steps = 5;
  double armijo = 1e-4;
  int max_backtracks = 50;
};

struct BoxLbfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  double pg_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Projected gradient for the constraint x >= lower.
inline Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& g,
                                          const Eigen::VectorXd& lower) {
  Eigen::VectorXd pg = g;
  for (Eigen::Index j = 0; j < x.size(); ++j)
    if (x[j] <= lower[j] && g[j] > 0.0) pg[j] = 0.0;
  return pg;
}

namespace detail {

struct Pair {
  Eigen::VectorXd s;
  Eigen::VectorXd y;
  double rho;
};

inline Eigen::VectorXd two_loop(const std::deque<Pair>& mem, const Eigen::VectorXd& g,
                                const Eigen::Array<bool, Eigen::Dynamic, 1>& free) {
  auto masked = [&](const Eigen::VectorXd& v) {
    return (free.cast<double>() * v.array()).matrix().eval();
  };
  Eigen::VectorXd q = masked(g);
  std::vector<double> alpha(mem.size());
  for (std::size_t i = mem.size(); i-- > 0;) {
    const Eigen::VectorXd s = masked(mem[i].s);
    const Eigen::VectorXd y = masked(mem[i].y);
    const double sy = s.dot(y);
    if (!(sy > 0.0)) {
      alpha[i] = 0.0;
      continue;
    }
    alpha[i] = s.dot(q) / sy;
    q -= alpha[i] * y;
  }
  double gamma = 1.0;
  if (!mem.empty()) {
    const Eigen::VectorXd s = masked(mem.back().s);
    const Eigen::VectorXd y = masked(mem.back().y);
    const double yy = y.squaredNorm();
    const double sy = s.dot(y);
    if (yy > 0.0 && sy > 0.0) gamma = sy / yy;
  }
  Eigen::VectorXd r = gamma * q;
  for (std::size_t i = 0; i < mem.size(); ++i) {
    const Eigen::VectorXd s = masked(mem[i].s);
    const Eigen::VectorXd y = masked(mem[i].y);
    const double sy = s.dot(y);
    if (!(sy > 0.0)) continue;
    const double beta = y.dot(r) / sy;
    r += (alpha[i] - beta) * s;
  }
  return -masked(r);
}

}  // namespace detail

/// Minimize f subject to x >= lower. `f(x, grad)` returns the value and
/// writes the gradient. The starting point is projected onto the box.
template <class Objective>
BoxLbfgsResult minimize_box(Objective&& f, Eigen::VectorXd x,
                            const Eigen::VectorXd& lower,
                            const BoxLbfgsOptions& opt = {}) {
  const Eigen::Index n = x.size();
  if (lower.size() != n) throw ConfigError("minimize_box: bound size mismatch");
  x = x.cwiseMax(lower);

  Eigen::VectorXd g(n), g_new(n);
  double fx = f(x, g);
  if (!std::isfinite(fx)) throw NumericalError("minimize_box: non-finite objective at start");

  std::deque<detail::Pair> mem;
  BoxLbfgsResult res;
  auto pg_inf = [&](const Eigen::VectorXd& xx, const Eigen::VectorXd& gg) {
    return projected_gradient(xx, gg, lower).lpNorm<Eigen::Infinity>();
  };

  int stalls = 0;
  int it = 0;
  for (; it < opt.max_iters; ++it) {
    const double pgn = pg_inf(x, g);
    if (pgn < opt.pg_tol * (1.0 + std::abs(fx))) {
      res.converged = true;
      break;
    }

    // Bertsekas' epsilon-active set.
    const double eps = std::min(1e-8, (x - (x - g).cwiseMax(lower)).lpNorm<Eigen::Infinity>());
    Eigen::Array<bool, Eigen::Dynamic, 1> free(n);
    for (Eigen::Index j = 0; j < n; ++j) free[j] = !(x[j] <= lower[j] + eps && g[j] > 0.0);

    Eigen::VectorXd d = detail::two_loop(mem, g, free);
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      mem.clear();
      d = -(free.cast<double>() * g.array()).matrix();
      slope = g.dot(d);
      if (!(slope < 0.0)) {
        res.converged = true;  // every descent coordinate is blocked
        break;
      }
    }

    double step = 1.0;
    if (mem.empty()) step = std::min(1.0, 1.0 / std::max(d.lpNorm<Eigen::Infinity>(), 1e-300));

    Eigen::VectorXd x_new(n);
    double f_new = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < opt.max_backtracks; ++bt) {
      x_new = (x + step * d).cwiseMax(lower);
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= fx + opt.armijo * g.dot(x_new - x)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!mem.empty()) {
        mem.clear();
        continue;
      }
      break;
    }

    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * y.squaredNorm() && sy > 0.0) {
      mem.push_back({s, y, 1.0 / sy});
      if (static_cast<int>(mem.size()) > opt.memory) mem.pop_front();
    }

    const double decrease = fx - f_new;
    x = x_new;
    g = g_new;
    fx = f_new;
    stalls = decrease <= opt.f_tol * std::max(1.0, std::abs(fx)) ? stalls + 1 : 0;
    if (stalls >= 3) {
      res.converged = pg_inf(x, g) < opt.pg_tol * (1.0 + std::abs(fx));
      ++it;
      break;
    }
  }

  // Projected-gradient polishing.
  double step = 1.0;
  if (!mem.empty()) {
    const auto& last = mem.back();
    const double yy = last.y.squaredNorm();
    if (yy > 0.0) step = last.s.dot(last.y) / yy;
  }
  for (int k = 0; k < opt.polish_steps; ++k) {
    const Eigen::VectorXd pg = projected_gradient(x, g, lower);
    if (pg.lpNorm<Eigen::Infinity>() == 0.0) break;
    bool improved = false;
    double t = step;
    Eigen::VectorXd x_new(n);
    for (int bt = 0; bt < opt.max_backtracks; ++bt) {
      x_new = (x - t * g).cwiseMax(lower);
      const double f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && f_new < fx + opt.armijo * g.dot(x_new - x)) {
        x = x_new;
        g = g_new;
        fx = f_new;
        improved = true;
        break;
      }
      t *= 0.5;
    }
    if (!improved) break;
  }

  res.x = std::move(x);
  res.f = fx;
  res.pg_norm = pg_inf(res.x, g);
  res.iterations = it;
  if (!res.converged) res.converged = res.pg_norm < opt.pg_tol * (1.0 + std::abs(fx));
  return res;
}

}  // namespace dpmppp::optim
