#pragma once

// Truncated stick-breaking CAVI for Dirichlet-process mixtures of marked
// Poisson processes with squared-link intensities.
//
// Cluster indices are 0-based; the last stick (k = K-1) is fixed at one.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dpmppp/basis.hpp"
#include "dpmppp/errors.hpp"
#include "dpmppp/objective.hpp"
#include "dpmppp/parallel.hpp"
#include "dpmppp/pointprocess.hpp"
#include "dpmppp/rng.hpp"
#include "dpmppp/special.hpp"

namespace dpmppp {

struct BasisConfig {
  int degree = 3;
  int n_interior = 10;
};

struct ModelConfig {
  int truncation_k = 30;
  double dp_alpha = 1.0;
  double ig_a0 = 1.0;
  double ig_b0 = 0.005;
  double delta = 1e-4;
  double radius_r = std::numeric_limits<double>::infinity();
  double elbo_rel_tol = 1e-6;
  int max_iters = 500;
  int n_starts = 8;
  std::uint64_t seed = 0;
  int jobs = 1;
  /// Sigma_theta at initialization is this multiple of the identity.
  double init_sigma_scale = 1e-2;
  /// a_km is floored at this fraction of the mean offset.
  double exposure_floor = 1e-6;
  /// Subjects with nu_ik below this are left out of the block log-terms.
  double nu_floor = 1e-12;
  ModeOptions mode{};

  void validate() const {
    if (truncation_k < 1) throw ConfigError("model: truncation_k must be >= 1");
    if (!(dp_alpha > 0.0)) throw ConfigError("model: dp_alpha must be > 0");
    if (!(ig_a0 > 0.0) || !(ig_b0 > 0.0)) throw ConfigError("model: ig_a0 and ig_b0 must be > 0");
    if (!(delta > 0.0)) throw ConfigError("model: delta must be > 0");
    if (!(radius_r > 0.0)) throw ConfigError("model: radius_r must be > 0");
    if (!(elbo_rel_tol > 0.0)) throw ConfigError("model: elbo_rel_tol must be > 0");
    if (max_iters < 1) throw ConfigError("model: max_iters must be >= 1");
    if (n_starts < 1) throw ConfigError("model: n_starts must be >= 1");
    if (!(init_sigma_scale > 0.0)) throw ConfigError("model: init_sigma_scale must be > 0");
    if (!(exposure_floor > 0.0)) throw ConfigError("model: exposure_floor must be > 0");
  }
};

/// Data-side quantities shared by every start: basis, M, Omega and the
/// cached basis rows per (subject, mark).
struct FitProblem {
  const Dataset* data = nullptr;
  std::shared_ptr<const TensorBasis> basis;
  Eigen::MatrixXd mass;
  PenaltyMatrix penalty;
  std::vector<std::array<SparseRows, 2>> rows;
  std::vector<double> offsets;
  std::vector<std::array<double, 2>> counts;
  double mean_offset = 0.0;
  double data_constant = 0.0;  // sum_i N_i log T_i
  /// Generalized eigenvalues of (Omega, M).
  Eigen::VectorXd penalty_mass_eigs;

  [[nodiscard]] int d() const noexcept { return basis->dim(); }
  [[nodiscard]] int r() const noexcept { return penalty.rank; }
  [[nodiscard]] std::size_t n() const noexcept { return offsets.size(); }

  static FitProblem build(const Dataset& data, std::shared_ptr<const TensorBasis> basis,
                          int jobs = 1) {
    data.validate();
    if (basis->dims() != data.dims()) throw ConfigError("fit: basis and data dimensions differ");
    FitProblem p;
    p.data = &data;
    p.basis = std::move(basis);
    p.mass = mass_matrix(*p.basis).m;
    p.penalty = penalty_matrix(*p.basis);
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(p.penalty.omega, p.mass,
                                                                   Eigen::EigenvaluesOnly);
    p.penalty_mass_eigs = ges.eigenvalues().cwiseMax(0.0);
    const std::size_t n = data.n();
    p.rows.resize(n);
    p.offsets.resize(n);
    p.counts.resize(n);
    parallel_for(n, jobs, [&](std::size_t i) {
      const auto& s = data.subjects[i];
      for (int m = 0; m < 2; ++m) {
        p.rows[i][m] = build_rows(*p.basis, s, m);
        p.counts[i][m] = static_cast<double>(p.rows[i][m].rows());
      }
      p.offsets[i] = s.offset_t;
    });
    for (std::size_t i = 0; i < n; ++i) {
      p.mean_offset += p.offsets[i] / static_cast<double>(n);
      p.data_constant += (p.counts[i][0] + p.counts[i][1]) * std::log(p.offsets[i]);
    }
    return p;
  }
};

struct VariationalState {
  int K = 0;
  int d = 0;
  Eigen::MatrixXd gamma;    // (K-1) x 2
  Eigen::MatrixXd nu;       // n x K
  Eigen::MatrixXd alpha_q;  // K x 2
  Eigen::MatrixXd beta_q;   // K x 2
  std::vector<std::array<Eigen::VectorXd, 2>> mu_theta;
  std::vector<std::array<Eigen::MatrixXd, 2>> sigma_theta;
  std::vector<std::array<double, 2>> sigma_logdet;
  std::vector<std::array<bool, 2>> mode_converged;
  /// Like_ik (without N_i log T_i) from the last assignment update.
  Eigen::MatrixXd like;
  bool like_valid = false;
};

inline double log_det_spd(const Eigen::MatrixXd& s, const std::string& label) {
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) throw NumericalError("cholesky failed for " + label);
  const Eigen::VectorXd diag = llt.matrixLLT().diagonal();
  if ((diag.array() <= 0.0).any()) throw NumericalError("cholesky failed for " + label);
  return 2.0 * diag.array().log().sum();
}

inline std::string block_label(int k, int m) {
  return "block (k=" + std::to_string(k) + ", m=" + std::to_string(m) + ")";
}

/// S = tr(Omega Sigma) + mu^T Omega mu.
inline double penalty_moment(const Eigen::MatrixXd& omega, const Eigen::VectorXd& mu,
                             const Eigen::MatrixXd& sigma) {
  return (omega.cwiseProduct(sigma)).sum() + mu.dot(omega * mu);
}

/// Dirichlet(1) responsibilities, alpha_q = a0 + r/2, flat coefficient
/// means matching each pool's crude rate, Sigma = c I, and beta_q from its
/// closed-form update at that (mu, Sigma).
inline VariationalState init_state(const FitProblem& p, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto n = static_cast<Eigen::Index>(p.n());
  if (n < 1) throw ConfigError("init_state: empty dataset");
  const int K = cfg.truncation_k;
  const int d = p.d();
  VariationalState s;
  s.K = K;
  s.d = d;
  s.nu.resize(n, K);
  std::exponential_distribution<double> expo(1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    double total = 0.0;
    for (int k = 0; k < K; ++k) total += (s.nu(i, k) = expo(rng));
    s.nu.row(i) /= total;
  }
  s.gamma = Eigen::MatrixXd::Ones(std::max(K - 1, 0), 2);
  s.gamma.col(1).setConstant(cfg.dp_alpha);
  s.alpha_q = Eigen::MatrixXd::Constant(K, 2, cfg.ig_a0 + 0.5 * p.r());
  s.beta_q = Eigen::MatrixXd::Constant(K, 2, cfg.ig_b0);
  s.mu_theta.resize(K);
  s.sigma_theta.resize(K);
  s.sigma_logdet.resize(K);
  s.mode_converged.resize(K);
  const double vol = p.basis->volume();
  for (int k = 0; k < K; ++k) {
    for (int m = 0; m < 2; ++m) {
      double events = 0.0, exposure = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        events += s.nu(i, k) * p.counts[i][m];
        exposure += s.nu(i, k) * p.offsets[i];
      }
      const double rate = exposure > 0.0 ? events / (exposure * vol) : 0.0;
      s.mu_theta[k][m] = Eigen::VectorXd::Constant(d, std::max(std::sqrt(rate), cfg.delta));
      s.sigma_theta[k][m] = cfg.init_sigma_scale * Eigen::MatrixXd::Identity(d, d);
      s.sigma_logdet[k][m] = d * std::log(cfg.init_sigma_scale);
      s.mode_converged[k][m] = true;
      s.beta_q(k, m) = cfg.ig_b0 + 0.5 * penalty_moment(p.penalty.omega, s.mu_theta[k][m],
                                                         s.sigma_theta[k][m]);
    }
  }
  return s;
}

inline double responsibility_mass(const VariationalState& s, int k) { return s.nu.col(k).sum(); }

/// Builds the block context for (k, m) from the current responsibilities.
inline ThetaBlockContext block_context(const VariationalState& s, const FitProblem& p,
                                       const ModelConfig& cfg, int k, int m) {
  double a = 0.0;
  std::vector<WeightedRows> events;
  for (std::size_t i = 0; i < p.n(); ++i) {
    const double w = s.nu(static_cast<Eigen::Index>(i), k);
    a += w * p.offsets[i];
    if (w > cfg.nu_floor && p.rows[i][m].rows() > 0) events.push_back({w, &p.rows[i][m]});
  }
  a = std::max(a, cfg.exposure_floor * p.mean_offset);
  const double eta = s.alpha_q(k, m) / s.beta_q(k, m);
  return make_block_context(a, eta, p.mass, p.penalty.omega, std::move(events));
}

/// For a block without events the mode is delta * 1 and
/// Sigma = (2 a M + eta Omega)^{-1}, so alternating the theta and beta
/// updates converges to the root of
///   eta * (b0 + 1/2 sum_j w_j / (2a + eta w_j)) = alpha_q,
/// w_j the generalized eigenvalues of (Omega, M). The left side increases
/// in eta, so bisection on [0, alpha_q / b0] finds it.
inline double event_free_eta(double a, double alpha_q, double b0, const Eigen::VectorXd& w) {
  auto g = [&](double eta) {
    double t = 0.0;
    for (Eigen::Index j = 0; j < w.size(); ++j) t += w[j] / (2.0 * a + eta * w[j]);
    return eta * (b0 + 0.5 * t) - alpha_q;
  };
  double lo = 0.0, hi = alpha_q / b0;
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (g(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Constrained Laplace update of (mu_theta, Sigma_theta) for block (k, m)
/// from a prepared context.
inline void laplace_update_theta(VariationalState& s, const ThetaBlockContext& ctx,
                                 const ModelConfig& cfg, int k, int m) {
  const Eigen::VectorXd warm = s.mu_theta[k][m].cwiseMax(cfg.delta);
  LaplaceResult lr = laplace_block(ctx, cfg.delta, warm, cfg.mode, block_label(k, m));
  s.mode_converged[k][m] = lr.mode.converged;
  s.mu_theta[k][m] = std::move(lr.mode.theta);
  s.sigma_theta[k][m] = std::move(lr.covariance);
  s.sigma_logdet[k][m] = lr.log_det;
  s.like_valid = false;
}

inline void laplace_update_theta(VariationalState& s, const FitProblem& p,
                                 const ModelConfig& cfg, int k, int m) {
  laplace_update_theta(s, block_context(s, p, cfg, k, m), cfg, k, m);
}

inline void update_variance(VariationalState& s, const FitProblem& p, const ModelConfig& cfg,
                            int k, int m) {
  s.beta_q(k, m) =
      cfg.ig_b0 + 0.5 * penalty_moment(p.penalty.omega, s.mu_theta[k][m], s.sigma_theta[k][m]);
}

inline void update_sticks(VariationalState& s, const ModelConfig& cfg) {
  const int K = s.K;
  if (K <= 1) return;
  const Eigen::VectorXd mass = s.nu.colwise().sum().transpose();
  double tail = 0.0;
  std::vector<double> after(static_cast<std::size_t>(K), 0.0);
  for (int k = K - 1; k >= 0; --k) {
    after[k] = tail;
    tail += mass[k];
  }
  for (int k = 0; k < K - 1; ++k) {
    s.gamma(k, 0) = 1.0 + mass[k];
    s.gamma(k, 1) = cfg.dp_alpha + after[k];
  }
}

/// zeta_k = E log pi_k under the truncated stick-breaking posterior.
inline Eigen::VectorXd expected_log_weights(const VariationalState& s) {
  const int K = s.K;
  Eigen::VectorXd zeta = Eigen::VectorXd::Zero(K);
  double prefix = 0.0;
  for (int k = 0; k < K - 1; ++k) {
    const double g1 = s.gamma(k, 0), g2 = s.gamma(k, 1);
    const double dsum = special::digamma(g1 + g2);
    zeta[k] = special::digamma(g1) - dsum + prefix;
    prefix += special::digamma(g2) - dsum;
  }
  zeta[K - 1] = prefix;
  return zeta;
}

inline bool same_blocks(const VariationalState& s, int k1, int k2) {
  for (int m = 0; m < 2; ++m)
    if (s.mu_theta[k1][m] != s.mu_theta[k2][m] || s.sigma_theta[k1][m] != s.sigma_theta[k2][m])
      return false;
  return true;
}

/// Like_ik = sum_m [ -T_i R_km + sum_j H(mu_ij, sigma2_ij) ].
inline Eigen::MatrixXd likelihood_scores(const VariationalState& s, const FitProblem& p,
                                         int jobs = 1) {
  const int K = s.K;
  const auto n = static_cast<Eigen::Index>(p.n());
  Eigen::MatrixXd like = Eigen::MatrixXd::Zero(n, K);
  std::array<std::vector<double>, 2> r_km;
  for (int m = 0; m < 2; ++m) {
    r_km[m].resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k)
      r_km[m][k] = (p.mass.cwiseProduct(s.sigma_theta[k][m])).sum() +
                   s.mu_theta[k][m].dot(p.mass * s.mu_theta[k][m]);
  }
  // Clusters whose blocks are bitwise identical share a column.
  std::vector<int> source(static_cast<std::size_t>(K));
  std::vector<int> unique;
  for (int k = 0; k < K; ++k) {
    source[k] = k;
    for (const int u : unique)
      if (same_blocks(s, u, k)) {
        source[k] = u;
        break;
      }
    if (source[k] == k) unique.push_back(k);
  }
  parallel_for(unique.size(), jobs, [&](std::size_t uu) {
    const int k = unique[uu];
    for (int m = 0; m < 2; ++m) {
      const Eigen::VectorXd& mu = s.mu_theta[k][m];
      const Eigen::MatrixXd& sigma = s.sigma_theta[k][m];
      for (Eigen::Index i = 0; i < n; ++i) {
        const SparseRows& rows = p.rows[static_cast<std::size_t>(i)][m];
        double h = 0.0;
        for (std::size_t r = 0; r < rows.rows(); ++r) {
          const double mean = rows.dot(r, mu);
          const double var = std::max(rows.quad(r, sigma), std::numeric_limits<double>::min());
          h += special::expected_log_square(mean, var).value;
        }
        like(i, k) += -p.offsets[static_cast<std::size_t>(i)] * r_km[m][k] + h;
      }
    }
  });
  for (int k = 0; k < K; ++k)
    if (source[k] != k) like.col(k) = like.col(source[k]);
  return like;
}

inline void update_assignments(VariationalState& s, const FitProblem& p, int jobs = 1) {
  s.like = likelihood_scores(s, p, jobs);
  s.like_valid = true;
  const Eigen::VectorXd zeta = expected_log_weights(s);
  for (Eigen::Index i = 0; i < s.nu.rows(); ++i) {
    Eigen::RowVectorXd score = s.like.row(i) + zeta.transpose();
    for (int k = 0; k < s.K; ++k)
      if (!std::isfinite(score[k]))
        throw NumericalError("assignment: non-finite score at (i=" + std::to_string(i) +
                             ", k=" + std::to_string(k) + ")");
    score.array() -= score.maxCoeff();
    score = score.array().exp().matrix();
    s.nu.row(i) = score / score.sum();
  }
}

/// The four ELBO blocks.
struct ElboParts {
  double lik = 0.0;
  double z = 0.0;
  double phi = 0.0;
  double theta_tau = 0.0;
  [[nodiscard]] double total() const noexcept { return lik + z + phi + theta_tau; }
};

inline ElboParts elbo_parts(VariationalState& s, const FitProblem& p, const ModelConfig& cfg,
                            int jobs = 1) {
  if (!s.like_valid) {
    s.like = likelihood_scores(s, p, jobs);
    s.like_valid = true;
  }
  ElboParts e;
  const int K = s.K;
  e.lik = s.nu.cwiseProduct(s.like).sum() + p.data_constant;

  const Eigen::VectorXd zeta = expected_log_weights(s);
  for (Eigen::Index i = 0; i < s.nu.rows(); ++i)
    for (int k = 0; k < K; ++k) {
      const double v = s.nu(i, k);
      e.z += v * zeta[k];
      if (v > 0.0) e.z -= v * std::log(v);
    }

  const double alpha = cfg.dp_alpha;
  for (int k = 0; k < K - 1; ++k) {
    const double g1 = s.gamma(k, 0), g2 = s.gamma(k, 1);
    const double dsum = special::digamma(g1 + g2);
    const double elog = special::digamma(g1) - dsum;
    const double elog1m = special::digamma(g2) - dsum;
    const double entropy_neg = special::log_gamma(g1 + g2) - special::log_gamma(g1) -
                               special::log_gamma(g2) + (g1 - 1.0) * elog + (g2 - 1.0) * elog1m;
    e.phi += std::log(alpha) + (alpha - 1.0) * elog1m - entropy_neg;
  }

  const double r = p.r();
  const double d = p.d();
  const double a0 = cfg.ig_a0, b0 = cfg.ig_b0;
  const double log2pi = std::log(2.0 * std::numbers::pi);
  for (int k = 0; k < K; ++k)
    for (int m = 0; m < 2; ++m) {
      const double aq = s.alpha_q(k, m), bq = s.beta_q(k, m);
      const double e_inv = aq / bq;
      const double e_log = std::log(bq) - special::digamma(aq);
      const double S = penalty_moment(p.penalty.omega, s.mu_theta[k][m], s.sigma_theta[k][m]);
      const double e_log_q_tau = aq * std::log(bq) - special::log_gamma(aq) - (aq + 1.0) * e_log - aq;
      const double e_log_q_theta = -0.5 * d * (log2pi + 1.0) - 0.5 * s.sigma_logdet[k][m];
      e.theta_tau += -0.5 * r * log2pi + 0.5 * p.penalty.log_pdet + a0 * std::log(b0) -
                     special::log_gamma(a0) - (0.5 * r + a0 + 1.0) * e_log -
                     (b0 + 0.5 * S) * e_inv - e_log_q_tau - e_log_q_theta;
    }
  return e;
}

inline double compute_elbo(VariationalState& s, const FitProblem& p, const ModelConfig& cfg,
                           int jobs = 1) {
  return elbo_parts(s, p, cfg, jobs).total();
}

/// argmax_k nu_ik, ties to the lowest index.
inline std::vector<int> hard_labels(const VariationalState& s) {
  std::vector<int> out(static_cast<std::size_t>(s.nu.rows()));
  for (Eigen::Index i = 0; i < s.nu.rows(); ++i) {
    int best = 0;
    for (int k = 1; k < s.K; ++k)
      if (s.nu(i, k) > s.nu(i, best)) best = k;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

/// {k : sum_i nu_ik > 1}.
inline std::vector<int> active_clusters(const VariationalState& s) {
  std::vector<int> out;
  for (int k = 0; k < s.K; ++k)
    if (responsibility_mass(s, k) > 1.0) out.push_back(k);
  return out;
}

/// One full sweep in the order theta-blocks, beta, sticks, assignments.
inline void cavi_sweep(VariationalState& s, const FitProblem& p, const ModelConfig& cfg,
                       int jobs = 1) {
  // Blocks without events whose inputs coincide bitwise with an earlier
  // block reuse its result.
  const int B = 2 * s.K;
  std::vector<ThetaBlockContext> ctx(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    const int k = b / 2, m = b % 2;
    ctx[b] = block_context(s, p, cfg, k, m);
    if (ctx[b].events.empty()) {
      const double eta =
          event_free_eta(ctx[b].a_weight, s.alpha_q(k, m), cfg.ig_b0, p.penalty_mass_eigs);
      s.beta_q(k, m) = s.alpha_q(k, m) / eta;
      ctx[b] = make_block_context(ctx[b].a_weight, eta, p.mass, p.penalty.omega);
    }
  }
  std::vector<int> source(static_cast<std::size_t>(B));
  std::vector<int> unique;
  for (int b = 0; b < B; ++b) {
    source[b] = b;
    if (ctx[b].events.empty()) {
      for (const int u : unique) {
        if (u % 2 != b % 2 || !ctx[u].events.empty()) continue;
        if (ctx[u].a_weight == ctx[b].a_weight && ctx[u].eta == ctx[b].eta &&
            s.mu_theta[u / 2][u % 2] == s.mu_theta[b / 2][b % 2]) {
          source[b] = u;
          break;
        }
      }
    }
    if (source[b] == b) unique.push_back(b);
  }
  parallel_for(unique.size(), jobs, [&](std::size_t uu) {
    const int b = unique[uu];
    laplace_update_theta(s, ctx[b], cfg, b / 2, b % 2);
  });
  for (int b = 0; b < B; ++b) {
    const int u = source[b];
    if (u == b) continue;
    const int k = b / 2, m = b % 2;
    s.mu_theta[k][m] = s.mu_theta[u / 2][m];
    s.sigma_theta[k][m] = s.sigma_theta[u / 2][m];
    s.sigma_logdet[k][m] = s.sigma_logdet[u / 2][m];
    s.mode_converged[k][m] = s.mode_converged[u / 2][m];
  }
  for (int k = 0; k < s.K; ++k)
    for (int m = 0; m < 2; ++m) update_variance(s, p, cfg, k, m);
  update_sticks(s, cfg);
  update_assignments(s, p, jobs);
}

struct StartResult {
  VariationalState state;
  std::vector<double> elbo_trace;
  bool converged = false;
  bool failed = false;
  std::string error;
  int unconverged_modes = 0;
};

/// Relabels clusters by decreasing sum_i nu_ik (stable). Returns false when
/// the order is already sorted.
inline bool sort_clusters(VariationalState& s) {
  std::vector<int> order(static_cast<std::size_t>(s.K));
  std::vector<double> mass(static_cast<std::size_t>(s.K));
  for (int k = 0; k < s.K; ++k) {
    order[k] = k;
    mass[k] = responsibility_mass(s, k);
  }
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return mass[x] > mass[y]; });
  bool identity = true;
  for (int k = 0; k < s.K; ++k) identity = identity && order[k] == k;
  if (identity) return false;
  VariationalState t = s;
  for (int k = 0; k < s.K; ++k) {
    const int src = order[k];
    t.nu.col(k) = s.nu.col(src);
    t.alpha_q.row(k) = s.alpha_q.row(src);
    t.beta_q.row(k) = s.beta_q.row(src);
    t.mu_theta[k] = s.mu_theta[src];
    t.sigma_theta[k] = s.sigma_theta[src];
    t.sigma_logdet[k] = s.sigma_logdet[src];
    t.mode_converged[k] = s.mode_converged[src];
    if (s.like_valid) t.like.col(k) = s.like.col(src);
  }
  s = std::move(t);
  return true;
}

inline StartResult run_start(const FitProblem& p, const ModelConfig& cfg, int start, int jobs = 1) {
  StartResult out;
  try {
    Rng rng = derive_stream(cfg.seed, 0xf17, static_cast<std::uint64_t>(start));
    out.state = init_state(p, cfg, rng);
    double prev = 0.0;
    int relabels = 0;
    for (int it = 0; it < cfg.max_iters; ++it) {
      cavi_sweep(out.state, p, cfg, jobs);
      for (const auto& kc : out.state.mode_converged)
        for (const bool c : kc) out.unconverged_modes += c ? 0 : 1;
      double elbo = compute_elbo(out.state, p, cfg, jobs);
      if (!std::isfinite(elbo)) throw NumericalError("elbo is not finite");
      out.elbo_trace.push_back(elbo);
      if (it > 0 && std::abs(elbo - prev) < cfg.elbo_rel_tol * std::abs(elbo)) {
        // The stick-breaking prior is not exchangeable: sort the labels by
        // size and resume until the order is stable.
        if (relabels < 3 && sort_clusters(out.state)) {
          ++relabels;
          update_sticks(out.state, cfg);
          update_assignments(out.state, p, jobs);
          elbo = compute_elbo(out.state, p, cfg, jobs);
          out.elbo_trace.push_back(elbo);
          prev = elbo;
          continue;
        }
        out.converged = true;
        break;
      }
      prev = elbo;
    }
  } catch (const NumericalError& e) {
    out.failed = true;
    out.error = e.what();
  }
  return out;
}

struct FitResult {
  VariationalState state;
  std::vector<double> elbo_trace;
  std::vector<int> hard_labels;
  std::vector<int> active_clusters;
  double runtime_s = 0.0;
  int best_start = 0;
  std::vector<double> start_elbos;
  bool converged = false;
  int unconverged_modes = 0;
};

/// cfg.n_starts independent starts; keeps the one with the largest final ELBO.
inline FitResult fit(const FitProblem& p, const ModelConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto n_starts = static_cast<std::size_t>(cfg.n_starts);
  std::vector<StartResult> starts(n_starts);
  const int outer = std::min(cfg.jobs, cfg.n_starts);
  const int inner = std::max(1, cfg.jobs / std::max(1, outer));
  parallel_for(n_starts, outer, [&](std::size_t j) {
    starts[j] = run_start(p, cfg, static_cast<int>(j), inner);
  });
  FitResult res;
  res.start_elbos.assign(n_starts, -std::numeric_limits<double>::infinity());
  std::string errors;
  int best = -1;
  for (std::size_t j = 0; j < n_starts; ++j) {
    if (starts[j].failed || starts[j].elbo_trace.empty()) {
      errors += "\n  start " + std::to_string(j) + ": " + starts[j].error;
      continue;
    }
    res.start_elbos[j] = starts[j].elbo_trace.back();
    if (best < 0 || res.start_elbos[j] > res.start_elbos[static_cast<std::size_t>(best)])
      best = static_cast<int>(j);
  }
  if (best < 0) throw NumericalError("fit: every start failed" + errors);
  StartResult& chosen = starts[static_cast<std::size_t>(best)];
  res.best_start = best;
  res.state = std::move(chosen.state);
  res.elbo_trace = std::move(chosen.elbo_trace);
  res.converged = chosen.converged;
  res.unconverged_modes = chosen.unconverged_modes;
  res.hard_labels = hard_labels(res.state);
  res.active_clusters = active_clusters(res.state);
  res.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline FitResult fit(const Dataset& data, const BasisConfig& bcfg, const ModelConfig& cfg) {
  auto basis = std::make_shared<const TensorBasis>(
      TensorBasis::uniform(bcfg.degree, bcfg.n_interior, data.domain));
  const FitProblem p = FitProblem::build(data, std::move(basis), cfg.jobs);
  return fit(p, cfg);
}

}  // namespace dpmppp
