#pragma once

// Coefficient-block objective J(theta) = -theta^T A theta + 2 sum nu log(theta^T B)
// with A = a M + (eta/2) Omega, its box-constrained maximizer and the Laplace
// covariance (-H)^{-1} at that point.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dpmppp/basis.hpp"
#include "dpmppp/errors.hpp"
#include "dpmppp/optim.hpp"
#include "dpmppp/pointprocess.hpp"

namespace dpmppp {

/// Basis rows of a set of events in sparse form: nnz (index, value) pairs
/// per event.
struct SparseRows {
  int nnz = 0;
  std::vector<int> index;
  std::vector<double> value;

  [[nodiscard]] std::size_t rows() const noexcept {
    return nnz == 0 ? 0 : index.size() / static_cast<std::size_t>(nnz);
  }
  [[nodiscard]] double dot(std::size_t r, const Eigen::VectorXd& theta) const {
    const std::size_t o = r * static_cast<std::size_t>(nnz);
    double s = 0.0;
    for (int e = 0; e < nnz; ++e) s += value[o + e] * theta[index[o + e]];
    return s;
  }
  /// b^T S b for the row's basis vector b.
  [[nodiscard]] double quad(std::size_t r, const Eigen::MatrixXd& S) const {
    const std::size_t o = r * static_cast<std::size_t>(nnz);
    double q = 0.0;
    for (int e = 0; e < nnz; ++e) {
      const double ve = value[o + e];
      if (ve == 0.0) continue;
      const double* col = S.data() + static_cast<Eigen::Index>(index[o + e]) * S.rows();
      double inner = 0.0;
      for (int f = 0; f < nnz; ++f) inner += value[o + f] * col[index[o + f]];
      q += ve * inner;
    }
    return q;
  }
};

inline SparseRows build_rows(const TensorBasis& basis, const MarkedPattern& s, int mark) {
  SparseRows rows;
  rows.nnz = basis.nnz();
  const auto nnz = static_cast<std::size_t>(rows.nnz);
  const std::size_t count = s.count(mark);
  rows.index.resize(count * nnz);
  rows.value.resize(count * nnz);
  std::size_t r = 0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (s.marks[j] != mark) continue;
    basis.eval_sparse(s.point(j), std::span<int>(rows.index.data() + r * nnz, nnz),
                      std::span<double>(rows.value.data() + r * nnz, nnz));
    ++r;
  }
  return rows;
}

struct WeightedRows {
  double weight = 0.0;
  const SparseRows* rows = nullptr;
};

struct ThetaBlockContext {
  double a_weight = 0.0;
  double eta = 0.0;
  Eigen::MatrixXd a_matrix;
  std::vector<WeightedRows> events;

  [[nodiscard]] int dim() const noexcept { return static_cast<int>(a_matrix.rows()); }
};

inline ThetaBlockContext make_block_context(double a, double eta, const Eigen::MatrixXd& mass,
                                            const Eigen::MatrixXd& omega,
                                            std::vector<WeightedRows> events = {}) {
  ThetaBlockContext ctx;
  ctx.a_weight = a;
  ctx.eta = eta;
  ctx.a_matrix = a * mass + (0.5 * eta) * omega;
  ctx.events = std::move(events);
  return ctx;
}

/// J(theta); writes the gradient when `grad` is non-null.
inline double coefficient_value(const Eigen::VectorXd& theta, const ThetaBlockContext& ctx,
                                Eigen::VectorXd* grad) {
  const Eigen::VectorXd at = ctx.a_matrix * theta;
  double value = -theta.dot(at);
  if (grad) *grad = -2.0 * at;
  double logs = 0.0;
  for (const auto& ev : ctx.events) {
    const SparseRows& rows = *ev.rows;
    const std::size_t nr = rows.rows();
    double block = 0.0;
    for (std::size_t r = 0; r < nr; ++r) {
      const double s = rows.dot(r, theta);
      if (!(s > 0.0))
        throw NumericalError("coefficient objective: nonpositive linear predictor at an event");
      block += std::log(s);
      if (grad) {
        const double c = 2.0 * ev.weight / s;
        const std::size_t o = r * static_cast<std::size_t>(rows.nnz);
        for (int e = 0; e < rows.nnz; ++e) (*grad)[rows.index[o + e]] += c * rows.value[o + e];
      }
    }
    logs += ev.weight * block;
  }
  return value + 2.0 * logs;
}

/// H = -2A - 2 sum nu B B^T / (theta^T B)^2.
inline Eigen::MatrixXd coefficient_hessian(const Eigen::VectorXd& theta,
                                           const ThetaBlockContext& ctx) {
  Eigen::MatrixXd h = -2.0 * ctx.a_matrix;
  for (const auto& ev : ctx.events) {
    const SparseRows& rows = *ev.rows;
    for (std::size_t r = 0; r < rows.rows(); ++r) {
      const double s = rows.dot(r, theta);
      if (!(s > 0.0))
        throw NumericalError("coefficient hessian: nonpositive linear predictor at an event");
      const double c = 2.0 * ev.weight / (s * s);
      const std::size_t o = r * static_cast<std::size_t>(rows.nnz);
      for (int e = 0; e < rows.nnz; ++e) {
        const double ve = c * rows.value[o + e];
        if (ve == 0.0) continue;
        for (int f = 0; f < rows.nnz; ++f)
          h(rows.index[o + f], rows.index[o + e]) -= ve * rows.value[o + f];
      }
    }
  }
  return h;
}

struct ObjectiveEval {
  double value = 0.0;
  Eigen::VectorXd gradient;
  std::optional<Eigen::MatrixXd> hessian;
};

inline ObjectiveEval coefficient_objective(const Eigen::VectorXd& theta,
                                           const ThetaBlockContext& ctx,
                                           bool with_hessian = false) {
  ObjectiveEval out;
  out.value = coefficient_value(theta, ctx, &out.gradient);
  if (with_hessian) out.hessian = coefficient_hessian(theta, ctx);
  return out;
}

struct ModeOptions {
  optim::BoxLbfgsOptions lbfgs{};
  /// Projected Newton refinements after the quasi-Newton stage.
  int newton_steps = 3;
  /// Newton stops once the projected gradient is below this * (1 + |J|).
  double newton_tol = 1e-12;
};

struct ModeResult {
  Eigen::VectorXd theta;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
  /// Infinity norm of the projected gradient of J at theta.
  double kkt_residual = 0.0;
  /// Hessian of J at theta, when already available.
  std::optional<Eigen::MatrixXd> hessian;
};

inline double projected_kkt(const Eigen::VectorXd& theta, const Eigen::VectorXd& grad_j,
                            double delta) {
  const Eigen::VectorXd lower = Eigen::VectorXd::Constant(theta.size(), delta);
  return optim::projected_gradient(theta, -grad_j, lower).lpNorm<Eigen::Infinity>();
}

namespace detail {

// Newton steps on the free coordinates; keeps any step that increases J.
// Leaves in `hessian` the Hessian at the final theta when it was computed
// there.
inline void newton_refine(Eigen::VectorXd& theta, double& value, const ThetaBlockContext& ctx,
                          double delta, int steps, double tol,
                          std::optional<Eigen::MatrixXd>& hessian) {
  const Eigen::Index d = theta.size();
  hessian.reset();
  for (int it = 0; it <= steps; ++it) {
    Eigen::VectorXd g;
    value = coefficient_value(theta, ctx, &g);
    Eigen::MatrixXd h = coefficient_hessian(theta, ctx);
    if (it == steps || projected_kkt(theta, g, delta) <= tol * (1.0 + std::abs(value))) {
      hessian = std::move(h);
      return;
    }
    std::vector<Eigen::Index> free;
    for (Eigen::Index j = 0; j < d; ++j)
      if (theta[j] > delta || g[j] > 0.0) free.push_back(j);
    const auto nf = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd neg(nf, nf);
    Eigen::VectorXd gf(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      gf[a] = g[free[a]];
      for (Eigen::Index b = 0; b < nf; ++b) neg(a, b) = -h(free[a], free[b]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(neg);
    if (nf == 0 || llt.info() != Eigen::Success) {
      hessian = std::move(h);
      return;
    }
    const Eigen::VectorXd step = llt.solve(gf);
    double t = 1.0;
    bool moved = false;
    for (int bt = 0; bt < 30; ++bt) {
      Eigen::VectorXd cand = theta;
      for (Eigen::Index a = 0; a < nf; ++a)
        cand[free[a]] = std::max(delta, theta[free[a]] + t * step[a]);
      Eigen::VectorXd gc;
      const double v = coefficient_value(cand, ctx, &gc);
      // near the mode J is flat to rounding; then a smaller KKT residual decides
      const double slack = 8.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(value));
      const bool better = v > value || (v >= value - slack && projected_kkt(cand, gc, delta) <
                                                                    projected_kkt(theta, g, delta));
      if (better && cand != theta) {
        theta = std::move(cand);
        value = v;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) {
      hessian = std::move(h);
      return;
    }
  }
}

}  // namespace detail

/// argmax of J over {theta : theta_j >= delta}.
inline ModeResult constrained_mode_find(const ThetaBlockContext& ctx, double delta,
                                        const Eigen::VectorXd& warm_start,
                                        const ModeOptions& opt = {}) {
  if (!(delta > 0.0)) throw ConfigError("mode find: delta must be > 0");
  const Eigen::Index d = ctx.dim();
  if (warm_start.size() != d) throw ConfigError("mode find: warm start has wrong length");
  const Eigen::VectorXd lower = Eigen::VectorXd::Constant(d, delta);
  auto neg = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const double v = coefficient_value(x, ctx, &g);
    g = -g;
    return -v;
  };
  const auto res = optim::minimize_box(neg, warm_start, lower, opt.lbfgs);
  ModeResult out;
  out.theta = res.x;
  out.value = -res.f;
  out.iterations = res.iterations;
  detail::newton_refine(out.theta, out.value, ctx, delta, opt.newton_steps, opt.newton_tol,
                        out.hessian);
  Eigen::VectorXd g;
  out.value = coefficient_value(out.theta, ctx, &g);
  out.kkt_residual = projected_kkt(out.theta, g, delta);
  out.converged = res.converged || out.kkt_residual < opt.lbfgs.pg_tol * (1.0 + std::abs(out.value));
  return out;
}

struct LaplaceResult {
  ModeResult mode;
  Eigen::MatrixXd covariance;
  /// log det of the covariance.
  double log_det = 0.0;
  double jitter = 0.0;
};

/// Sigma = (-H)^{-1}; Cholesky with relative jitter 1e-10 .. 1e-6 of the
/// mean diagonal when the plain factorization fails.
inline LaplaceResult laplace_from_mode(ModeResult mode, const ThetaBlockContext& ctx,
                                       const std::string& label = "block") {
  const Eigen::MatrixXd neg =
      mode.hessian ? Eigen::MatrixXd(-*mode.hessian) : Eigen::MatrixXd(-coefficient_hessian(mode.theta, ctx));
  const double scale = std::max(neg.diagonal().mean(), 1e-300);
  const double jitters[] = {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6};
  for (const double j : jitters) {
    Eigen::MatrixXd m = neg;
    if (j > 0.0) m.diagonal().array() += j * scale;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) continue;
    const Eigen::VectorXd diag = llt.matrixLLT().diagonal();
    if ((diag.array() <= 0.0).any()) continue;
    LaplaceResult out;
    out.covariance = llt.solve(Eigen::MatrixXd::Identity(neg.rows(), neg.cols()));
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    out.log_det = -2.0 * diag.array().log().sum();
    out.jitter = j * scale;
    out.mode = std::move(mode);
    return out;
  }
  throw NumericalError("laplace: negative Hessian not positive definite after jitter (" + label + ")");
}

inline LaplaceResult laplace_block(const ThetaBlockContext& ctx, double delta,
                                   const Eigen::VectorXd& warm_start,
                                   const ModeOptions& opt = {},
                                   const std::string& label = "block") {
  return laplace_from_mode(constrained_mode_find(ctx, delta, warm_start, opt), ctx, label);
}

}  // namespace dpmppp
