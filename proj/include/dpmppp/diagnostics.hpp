#pragma once

// Desk-scale harness for the mode theory of a single coefficient block on a
// 1D domain: consistency of the constrained empirical mode, separation of
// sign-changing coefficients, and dominance of the same-sign chambers in
// the exponential weight.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dpmppp/basis.hpp"
#include "dpmppp/errors.hpp"
#include "dpmppp/objective.hpp"
#include "dpmppp/parallel.hpp"
#include "dpmppp/pointprocess.hpp"
#include "dpmppp/quadrature.hpp"
#include "dpmppp/rng.hpp"

namespace dpmppp {

struct TheoryScenario {
  int dim_d = 3;
  Interval domain{0.0, 1.0};
  Eigen::VectorXd true_theta;
  std::vector<double> exposure_ladder{10.0, 100.0, 1000.0, 10000.0};
  double delta = 1e-4;
  /// Radius of the comparison ball; must be finite for the chamber checks.
  double radius_r = 4.0;
  /// Prior precision eta; the penalty level eta / (2a) vanishes with a.
  double eta = 1.0;

  void validate() const {
    if (dim_d < 2 || dim_d > 6) throw ConfigError("theory scenario: dim_d must be in [2, 6]");
    if (!(domain.lo < domain.hi)) throw ConfigError("theory scenario: empty domain");
    if (true_theta.size() != dim_d) throw ConfigError("theory scenario: true_theta length != dim_d");
    if (!(true_theta.minCoeff() > 0.0)) throw ConfigError("theory scenario: true_theta must be > 0");
    if (!(delta > 0.0) || delta >= true_theta.minCoeff())
      throw ConfigError("theory scenario: need 0 < delta < min true_theta");
    if (!(radius_r > true_theta.norm()) || !std::isfinite(radius_r))
      throw ConfigError("theory scenario: radius_r must be finite and exceed |true_theta|");
    if (!(eta >= 0.0)) throw ConfigError("theory scenario: eta must be >= 0");
    if (exposure_ladder.empty()) throw ConfigError("theory scenario: empty exposure ladder");
    for (std::size_t i = 0; i < exposure_ladder.size(); ++i) {
      if (!(exposure_ladder[i] > 0.0)) throw ConfigError("theory scenario: exposures must be > 0");
      if (i > 0 && !(exposure_ladder[i] > exposure_ladder[i - 1]))
        throw ConfigError("theory scenario: exposure ladder must increase");
    }
  }

  /// Degree min(d - 1, 3) with d - degree - 1 interior knots.
  [[nodiscard]] std::shared_ptr<const TensorBasis> basis() const {
    const int degree = std::min(dim_d - 1, 3);
    return std::make_shared<const TensorBasis>(
        TensorBasis({build_basis_1d(degree, dim_d - degree - 1, domain.lo, domain.hi)}));
  }
};

inline TheoryScenario default_theory_scenario(int d) {
  TheoryScenario s;
  s.dim_d = d;
  s.true_theta.resize(d);
  for (int j = 0; j < d; ++j) s.true_theta[j] = 1.0 + 0.6 * std::sin(1.7 * j + 0.4);
  s.radius_r = 2.5 * s.true_theta.norm();
  return s;
}

/// Events of one exposure level, with everything needed to evaluate the
/// normalized criterion J~ = J / a.
struct EmpiricalBlock {
  double exposure = 0.0;
  Eigen::MatrixXd rows;  // events x d
  SparseRows sparse;
  ThetaBlockContext ctx;

  /// -theta^T M theta + (2/a) sum log|s| - lambda_P theta^T Omega theta, with
  /// log|s| replaced by max(log|s|, -L_tr) when `l_tr` is given; -inf when
  /// any untruncated s is zero.
  [[nodiscard]] double j_abs(const Eigen::VectorXd& theta, std::optional<double> l_tr = {}) const {
    double logs = 0.0;
    const Eigen::VectorXd s = rows * theta;
    for (Eigen::Index j = 0; j < s.size(); ++j) {
      const double v = std::abs(s[j]);
      if (l_tr) {
        logs += std::max(std::log(v), -*l_tr);
      } else {
        if (v == 0.0) return -std::numeric_limits<double>::infinity();
        logs += std::log(v);
      }
    }
    return (-theta.dot(ctx.a_matrix * theta) + 2.0 * logs) / exposure;
  }
};

struct TheoryProblem {
  TheoryScenario scn;
  std::shared_ptr<const TensorBasis> basis;
  Eigen::MatrixXd mass;
  Eigen::MatrixXd omega;

  explicit TheoryProblem(TheoryScenario s) : scn(std::move(s)) {
    scn.validate();
    basis = scn.basis();
    mass = mass_matrix(*basis).m;
    omega = penalty_matrix(*basis).omega;
  }

  [[nodiscard]] EmpiricalBlock empirical(double exposure, Rng& rng) const {
    const Points pts =
        sample_inhomogeneous(IntensitySpec::squared_link(basis, scn.true_theta), exposure, rng);
    return empirical_from_points(exposure, pts);
  }

  [[nodiscard]] EmpiricalBlock empirical_from_points(double exposure, const Points& pts) const {
    EmpiricalBlock e;
    e.exposure = exposure;
    const int d = scn.dim_d;
    const int nnz = basis->nnz();
    e.rows = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pts.size()), d);
    e.sparse.nnz = nnz;
    e.sparse.index.resize(pts.size() * static_cast<std::size_t>(nnz));
    e.sparse.value.resize(pts.size() * static_cast<std::size_t>(nnz));
    for (std::size_t j = 0; j < pts.size(); ++j) {
      const std::size_t o = j * static_cast<std::size_t>(nnz);
      basis->eval_sparse(pts.point(j), std::span<int>(e.sparse.index.data() + o, nnz),
                         std::span<double>(e.sparse.value.data() + o, nnz));
      for (int k = 0; k < nnz; ++k)
        e.rows(static_cast<Eigen::Index>(j), e.sparse.index[o + k]) += e.sparse.value[o + k];
    }
    e.ctx = make_block_context(exposure, scn.eta, mass, omega);
    return e;
  }

  /// Constrained empirical mode over {theta >= delta}.
  [[nodiscard]] Eigen::VectorXd empirical_mode(const EmpiricalBlock& e) const {
    ThetaBlockContext ctx = e.ctx;
    ctx.events = {WeightedRows{1.0, &e.sparse}};
    const ModeResult m = constrained_mode_find(
        ctx, scn.delta, scn.true_theta.cwiseMax(scn.delta));
    if (!m.converged) throw NumericalError("theory: empirical mode did not converge");
    return m.theta;
  }
};

/// Q(theta) = -theta^T M theta + 2 int lambda_0 log s - lbar theta^T Omega theta
/// by 2000-node Gauss-Legendre, as a block context with a = 1.
struct PopulationCriterion {
  std::vector<SparseRows> nodes;
  ThetaBlockContext ctx;

  PopulationCriterion(const TheoryProblem& p, double lambda_bar = 0.0, int n_nodes = 2000) {
    const quadrature::Rule rule = quadrature::gauss_legendre(n_nodes, p.scn.domain.lo, p.scn.domain.hi);
    const IntensitySpec truth = IntensitySpec::squared_link(p.basis, p.scn.true_theta);
    const int nnz = p.basis->nnz();
    nodes.resize(rule.nodes.size());
    std::vector<WeightedRows> ev;
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      const double y = rule.nodes[q];
      nodes[q].nnz = nnz;
      nodes[q].index.resize(static_cast<std::size_t>(nnz));
      nodes[q].value.resize(static_cast<std::size_t>(nnz));
      p.basis->eval_sparse(std::span<const double>(&y, 1), nodes[q].index, nodes[q].value);
      ev.push_back(WeightedRows{rule.weights[q] * truth(std::span<const double>(&y, 1)), nullptr});
    }
    for (std::size_t q = 0; q < nodes.size(); ++q) ev[q].rows = &nodes[q];
    ctx = make_block_context(1.0, 2.0 * lambda_bar, p.mass, p.omega, std::move(ev));
  }

  PopulationCriterion(const PopulationCriterion&) = delete;
  PopulationCriterion& operator=(const PopulationCriterion&) = delete;

  [[nodiscard]] double value(const Eigen::VectorXd& theta) const {
    return coefficient_value(theta, ctx, nullptr);
  }

  /// theta* = argmax Q over {theta >= delta}.
  [[nodiscard]] Eigen::VectorXd maximize(double delta, const Eigen::VectorXd& warm) const {
    const ModeResult m = constrained_mode_find(ctx, delta, warm.cwiseMax(delta));
    if (!m.converged)
      throw DiagnosticFailure("theory: population optimizer did not converge (kkt " +
                              std::to_string(m.kkt_residual) + ")");
    return m.theta;
  }
};

// ---------------------------------------------------------------------------
// Mode consistency

struct TrendResult {
  std::vector<double> exposures;
  Eigen::VectorXd theta_star;
  /// errors[rep][level]: mean |theta_hat_delta - theta*| over the inner draws.
  std::vector<std::vector<double>> errors;

  [[nodiscard]] bool decreasing(std::size_t rep) const {
    for (std::size_t l = 1; l < errors[rep].size(); ++l)
      if (!(errors[rep][l] < errors[rep][l - 1])) return false;
    return true;
  }
  [[nodiscard]] int reps_decreasing() const {
    int c = 0;
    for (std::size_t r = 0; r < errors.size(); ++r) c += decreasing(r) ? 1 : 0;
    return c;
  }
  [[nodiscard]] std::vector<double> mean_error() const {
    std::vector<double> m(exposures.size(), 0.0);
    for (const auto& row : errors)
      for (std::size_t l = 0; l < row.size(); ++l) m[l] += row[l] / static_cast<double>(errors.size());
    return m;
  }
};

inline TrendResult mode_consistency_trend(const TheoryScenario& scn, int reps, std::uint64_t seed,
                                          int inner = 5, int jobs = 1) {
  if (reps < 1 || inner < 1) throw ConfigError("trend: reps and inner must be >= 1");
  if (scn.dim_d > 6) throw ConfigError("trend: dim_d must be <= 6");
  const TheoryProblem p(scn);
  const PopulationCriterion pop(p);
  TrendResult out;
  out.exposures = scn.exposure_ladder;
  out.theta_star = pop.maximize(scn.delta, scn.true_theta);
  const std::size_t L = scn.exposure_ladder.size();
  out.errors.assign(static_cast<std::size_t>(reps), std::vector<double>(L, 0.0));
  parallel_for(static_cast<std::size_t>(reps) * L, jobs, [&](std::size_t task) {
    const std::size_t rep = task / L, l = task % L;
    double sum = 0.0;
    for (int t = 0; t < inner; ++t) {
      Rng rng = derive_stream(seed, 0x7e1 + rep, l * 1000 + static_cast<std::size_t>(t));
      const EmpiricalBlock e = p.empirical(scn.exposure_ladder[l], rng);
      sum += (p.empirical_mode(e) - out.theta_star).norm();
    }
    out.errors[rep][l] = sum / inner;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Sign chambers

enum class Chamber { positive, negative, sign_changing, other };

/// Classifies theta (inside the radius-R ball) by sup / inf of s_theta on a
/// regular grid of the domain.
struct ChamberClassifier {
  Eigen::MatrixXd grid_rows;
  double delta = 0.0;
  double radius = 0.0;

  ChamberClassifier(const TheoryProblem& p, int n_grid = 1001)
      : delta(p.scn.delta), radius(p.scn.radius_r) {
    grid_rows.resize(n_grid, p.scn.dim_d);
    for (int g = 0; g < n_grid; ++g) {
      const double y = p.scn.domain.lo + p.scn.domain.length() * g / (n_grid - 1.0);
      grid_rows.row(g) = p.basis->eval(std::span<const double>(&y, 1)).transpose();
    }
  }

  [[nodiscard]] Chamber operator()(const Eigen::VectorXd& theta) const {
    if (theta.norm() > radius) return Chamber::other;
    const Eigen::VectorXd s = grid_rows * theta;
    const double lo = s.minCoeff(), hi = s.maxCoeff();
    if (lo >= delta) return Chamber::positive;
    if (hi <= -delta) return Chamber::negative;
    if (hi >= delta && lo <= -delta) return Chamber::sign_changing;
    return Chamber::other;
  }
};

/// Midpoint lattice of [-R, R]^d with n points per axis.
inline std::vector<Eigen::VectorXd> cube_lattice(int d, double radius, int n) {
  const double h = 2.0 * radius / n;
  std::size_t total = 1;
  for (int j = 0; j < d; ++j) total *= static_cast<std::size_t>(n);
  std::vector<Eigen::VectorXd> out;
  out.reserve(total);
  for (std::size_t f = 0; f < total; ++f) {
    Eigen::VectorXd t(d);
    std::size_t rest = f;
    for (int j = d - 1; j >= 0; --j) {
      t[j] = -radius + (static_cast<double>(rest % static_cast<std::size_t>(n)) + 0.5) * h;
      rest /= static_cast<std::size_t>(n);
    }
    out.push_back(std::move(t));
  }
  return out;
}

/// Compass search for max J~_abs inside one chamber, halving the step.
inline Eigen::VectorXd polish_in_chamber(const EmpiricalBlock& e, const ChamberClassifier& cls,
                                         Chamber target, Eigen::VectorXd theta, double step,
                                         double min_step = 1e-7) {
  double best = e.j_abs(theta);
  const Eigen::Index d = theta.size();
  while (step > min_step) {
    bool improved = false;
    for (Eigen::Index j = 0; j < d; ++j)
      for (const double sgn : {1.0, -1.0}) {
        Eigen::VectorXd cand = theta;
        cand[j] += sgn * step;
        if (cls(cand) != target) continue;
        const double v = e.j_abs(cand);
        if (v > best) {
          best = v;
          theta = std::move(cand);
          improved = true;
        }
      }
    if (!improved) step *= 0.5;
  }
  return theta;
}

struct GapRep {
  double sup_sign_changing = 0.0;
  double sup_positive = 0.0;
  double sup_negative = 0.0;
  /// Grid argmax over T_delta and its distance to {+-theta_hat_delta}.
  Eigen::VectorXd grid_argmax;
  double argmax_distance = 0.0;
  bool gap = false;
};

struct GapResult {
  double exposure = 0.0;
  double grid_step = 0.0;
  std::vector<GapRep> reps;

  [[nodiscard]] int gap_count() const {
    int c = 0;
    for (const auto& r : reps) c += r.gap ? 1 : 0;
    return c;
  }
  [[nodiscard]] double frequency() const {
    return reps.empty() ? 0.0 : static_cast<double>(gap_count()) / static_cast<double>(reps.size());
  }
};

inline GapResult chamber_gap_check(const TheoryScenario& scn, double exposure, int reps,
                                   std::uint64_t seed, int grid_per_axis = 201, int jobs = 1) {
  if (scn.dim_d > 4) throw ConfigError("chamber gap: dim_d must be <= 4");
  if (reps < 1) throw ConfigError("chamber gap: reps must be >= 1");
  const TheoryProblem p(scn);
  const ChamberClassifier cls(p);
  const std::vector<Eigen::VectorXd> lattice = cube_lattice(scn.dim_d, scn.radius_r, grid_per_axis);
  std::vector<Chamber> chamber(lattice.size());
  for (std::size_t g = 0; g < lattice.size(); ++g) chamber[g] = cls(lattice[g]);
  GapResult out;
  out.exposure = exposure;
  out.grid_step = 2.0 * scn.radius_r / grid_per_axis;
  out.reps.resize(static_cast<std::size_t>(reps));
  parallel_for(static_cast<std::size_t>(reps), jobs, [&](std::size_t rep) {
    Rng rng = derive_stream(seed, 0x9a9, rep);
    const EmpiricalBlock e = p.empirical(exposure, rng);
    const double ninf = -std::numeric_limits<double>::infinity();
    double best[3] = {ninf, ninf, ninf};
    std::size_t arg[3] = {0, 0, 0};
    for (std::size_t g = 0; g < lattice.size(); ++g) {
      const auto c = static_cast<int>(chamber[g]);
      if (c > 2) continue;
      const double v = e.j_abs(lattice[g]);
      if (v > best[c]) {
        best[c] = v;
        arg[c] = g;
      }
    }
    GapRep r;
    const Eigen::VectorXd mode = p.empirical_mode(e);
    r.sup_positive = std::max(best[0], e.j_abs(mode));
    r.sup_negative = std::max(best[1], e.j_abs(-mode));
    r.sup_sign_changing = best[2];
    if (std::isfinite(best[2])) {
      const Eigen::VectorXd pol =
          polish_in_chamber(e, cls, Chamber::sign_changing, lattice[arg[2]], out.grid_step);
      r.sup_sign_changing = std::max(best[2], e.j_abs(pol));
    }
    r.gap = r.sup_sign_changing < std::max(r.sup_positive, r.sup_negative);
    int top = 0;
    for (int c = 1; c < 3; ++c)
      if (best[c] > best[top]) top = c;
    r.grid_argmax = lattice[arg[top]];
    r.argmax_distance = std::min((r.grid_argmax - mode).norm(), (r.grid_argmax + mode).norm());
    out.reps[rep] = std::move(r);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Exponential-weight dominance

struct DominanceRep {
  /// log Z_a(S_sc) - log Z_a(D_delta) per exposure.
  std::vector<double> log_ratio;
  std::vector<double> log_z_positive;
  std::vector<double> log_z_negative;
  std::vector<double> log_z_sign_changing;

  [[nodiscard]] bool decreasing() const {
    for (std::size_t l = 1; l < log_ratio.size(); ++l)
      if (!(log_ratio[l] < log_ratio[l - 1])) return false;
    return true;
  }
};

struct DominanceResult {
  std::vector<double> exposures;
  std::vector<DominanceRep> reps;

  [[nodiscard]] int reps_decreasing() const {
    int c = 0;
    for (const auto& r : reps) c += r.decreasing() ? 1 : 0;
    return c;
  }
  /// max |log Z(-D) - log Z(D)| over reps and exposures.
  [[nodiscard]] double max_symmetry_gap() const {
    double m = 0.0;
    for (const auto& r : reps)
      for (std::size_t l = 0; l < r.log_ratio.size(); ++l)
        m = std::max(m, std::abs(r.log_z_negative[l] - r.log_z_positive[l]));
    return m;
  }
};

namespace detail {

struct LogSum {
  double max = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  void add(double v) {
    if (!std::isfinite(v)) return;
    if (v > max) {
      sum = sum * std::exp(max - v) + 1.0;
      max = v;
    } else {
      sum += std::exp(v - max);
    }
  }
  [[nodiscard]] double value(double log_cell) const {
    return std::isfinite(max) ? max + std::log(sum) + log_cell : -std::numeric_limits<double>::infinity();
  }
};

}  // namespace detail

/// Z_a(C) = int_C exp(a J~_abs) on a midpoint lattice of [-R, R]^d in
/// log-sum-exp form; an empty or all -inf region gives log Z = -inf (ratio 0).
inline DominanceResult dominance_ratio(const TheoryScenario& scn, int reps, std::uint64_t seed,
                                       int grid_per_axis = 200, int jobs = 1) {
  if (scn.dim_d > 3) throw ConfigError("dominance: dim_d must be <= 3");
  if (grid_per_axis < 200) throw ConfigError("dominance: need >= 200 grid points per axis");
  if (reps < 1) throw ConfigError("dominance: reps must be >= 1");
  const TheoryProblem p(scn);
  const ChamberClassifier cls(p);
  const std::vector<Eigen::VectorXd> lattice = cube_lattice(scn.dim_d, scn.radius_r, grid_per_axis);
  std::vector<Chamber> chamber(lattice.size());
  for (std::size_t g = 0; g < lattice.size(); ++g) chamber[g] = cls(lattice[g]);
  const double log_cell = scn.dim_d * std::log(2.0 * scn.radius_r / grid_per_axis);
  DominanceResult out;
  out.exposures = scn.exposure_ladder;
  const std::size_t L = scn.exposure_ladder.size();
  out.reps.assign(static_cast<std::size_t>(reps), DominanceRep{});
  for (auto& r : out.reps) {
    r.log_ratio.assign(L, 0.0);
    r.log_z_positive.assign(L, 0.0);
    r.log_z_negative.assign(L, 0.0);
    r.log_z_sign_changing.assign(L, 0.0);
  }
  parallel_for(static_cast<std::size_t>(reps) * L, jobs, [&](std::size_t task) {
    const std::size_t rep = task / L, l = task % L;
    const double a = scn.exposure_ladder[l];
    Rng rng = derive_stream(seed, 0xd0e + rep, l);
    const EmpiricalBlock e = p.empirical(a, rng);
    detail::LogSum z[3];
    for (std::size_t g = 0; g < lattice.size(); ++g) {
      const auto c = static_cast<int>(chamber[g]);
      if (c > 2) continue;
      z[c].add(a * e.j_abs(lattice[g]));
    }
    DominanceRep& r = out.reps[rep];
    r.log_z_positive[l] = z[0].value(log_cell);
    r.log_z_negative[l] = z[1].value(log_cell);
    r.log_z_sign_changing[l] = z[2].value(log_cell);
    if (!std::isfinite(r.log_z_positive[l]))
      throw DiagnosticFailure("dominance: positive chamber carries no weight on the grid");
    r.log_ratio[l] = r.log_z_sign_changing[l] - r.log_z_positive[l];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Truncated logarithm and concavity

struct TruncationCheck {
  int points = 0;
  int mismatches = 0;
  double l_tr = 0.0;
};

/// On D_delta and -D_delta, max(log|s|, -L_tr) with exp(-L_tr) < delta leaves
/// J~_abs bitwise unchanged.
inline TruncationCheck truncated_log_check(const TheoryScenario& scn, double exposure, int n_points,
                                           std::uint64_t seed) {
  const TheoryProblem p(scn);
  const ChamberClassifier cls(p);
  Rng rng = derive_stream(seed, 0x7c, 0);
  const EmpiricalBlock e = p.empirical(exposure, rng);
  TruncationCheck out;
  out.l_tr = std::max(0.0, -std::log(scn.delta)) + 1.0;
  const double top = scn.radius_r / std::sqrt(static_cast<double>(scn.dim_d));
  int drawn = 0;
  while (out.points < n_points && drawn < 1000 * n_points) {
    ++drawn;
    Eigen::VectorXd t(scn.dim_d);
    for (int j = 0; j < scn.dim_d; ++j) t[j] = scn.delta + (top - scn.delta) * uniform01(rng);
    if (uniform01(rng) < 0.5) t = -t;
    const Chamber c = cls(t);
    if (c != Chamber::positive && c != Chamber::negative) continue;
    ++out.points;
    if (e.j_abs(t) != e.j_abs(t, out.l_tr)) ++out.mismatches;
  }
  return out;
}

struct ConcavityReport {
  int probes = 0;
  double max_lambda = -std::numeric_limits<double>::infinity();
  double bound = 0.0;
  Eigen::VectorXd worst;
};

/// Samples theta uniformly on [delta, delta + scale]^d and checks
/// lambda_max(H(theta)) <= -2 a lambda_min(M) + 1e-8.
inline ConcavityReport concavity_probe(const ThetaBlockContext& ctx, const Eigen::MatrixXd& mass,
                                       int n_probes, Rng& rng, double delta = 1e-4,
                                       double scale = 2.0) {
  if (!(ctx.a_weight > 0.0))
    throw DiagnosticFailure("concavity probe: exposure weight a must be > 0 (got " +
                            std::to_string(ctx.a_weight) + ")");
  const double mu = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(mass, Eigen::EigenvaluesOnly)
                        .eigenvalues()
                        .minCoeff();
  ConcavityReport out;
  out.bound = -2.0 * ctx.a_weight * mu + 1e-8;
  for (int t = 0; t < n_probes; ++t) {
    Eigen::VectorXd theta(ctx.dim());
    for (int j = 0; j < ctx.dim(); ++j) theta[j] = delta + scale * uniform01(rng);
    const Eigen::MatrixXd h = coefficient_hessian(theta, ctx);
    const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h, Eigen::EigenvaluesOnly)
                            .eigenvalues()
                            .maxCoeff();
    ++out.probes;
    if (lmax > out.max_lambda) {
      out.max_lambda = lmax;
      out.worst = theta;
    }
    if (lmax > out.bound) {
      std::ostringstream msg;
      msg << "concavity probe: lambda_max(H) = " << lmax << " exceeds " << out.bound
          << " at theta = [" << theta.transpose() << "]";
      throw DiagnosticFailure(msg.str());
    }
  }
  return out;
}

/// Largest violation of J(t2) <= J(t1) + grad J(t1)^T (t2 - t1) - a mu |t2 - t1|^2
/// over random feasible pairs (<= 0 means the inequality held everywhere).
inline double strong_concavity_pairs(const ThetaBlockContext& ctx, const Eigen::MatrixXd& mass,
                                     int n_pairs, Rng& rng, double delta = 1e-4, double scale = 2.0) {
  const double mu = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(mass, Eigen::EigenvaluesOnly)
                        .eigenvalues()
                        .minCoeff();
  double worst = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < n_pairs; ++t) {
    Eigen::VectorXd t1(ctx.dim()), t2(ctx.dim());
    for (int j = 0; j < ctx.dim(); ++j) {
      t1[j] = delta + scale * uniform01(rng);
      t2[j] = delta + scale * uniform01(rng);
    }
    Eigen::VectorXd g;
    const double j1 = coefficient_value(t1, ctx, &g);
    const double j2 = coefficient_value(t2, ctx, nullptr);
    const Eigen::VectorXd step = t2 - t1;
    const double rhs = j1 + g.dot(step) - ctx.a_weight * mu * step.squaredNorm();
    worst = std::max(worst, (j2 - rhs) / (1.0 + std::abs(j2)));
  }
  return worst;
}

}  // namespace dpmppp
