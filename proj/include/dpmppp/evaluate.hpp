#pragma once

// Post-fit evaluation: confusion matrices with optimal label matching,
// purity, plug-in surface grids and the feature-based k-means baselines.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dpmppp/basis.hpp"
#include "dpmppp/errors.hpp"
#include "dpmppp/pointprocess.hpp"
#include "dpmppp/rng.hpp"

namespace dpmppp {

struct ConfusionMatrix {
  /// rows: true labels, columns: estimated labels.
  Eigen::MatrixXi counts;
  std::vector<int> row_labels;
  std::vector<int> col_labels;

  [[nodiscard]] int total() const { return counts.sum(); }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& truth,
                                        const std::vector<int>& estimate) {
  if (truth.size() != estimate.size()) throw DataError("confusion: label vectors differ in length");
  ConfusionMatrix cm;
  std::map<int, int> rows, cols;
  for (const int t : truth) rows.emplace(t, 0);
  for (const int e : estimate) cols.emplace(e, 0);
  for (auto& [label, idx] : rows) {
    idx = static_cast<int>(cm.row_labels.size());
    cm.row_labels.push_back(label);
  }
  for (auto& [label, idx] : cols) {
    idx = static_cast<int>(cm.col_labels.size());
    cm.col_labels.push_back(label);
  }
  cm.counts = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(rows.size()),
                                    static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < truth.size(); ++i) ++cm.counts(rows[truth[i]], cols[estimate[i]]);
  return cm;
}

/// Minimum-cost assignment of rows to columns (rows <= cols) by the
/// Hungarian method with potentials. Returns the column of every row.
inline std::vector<int> hungarian_min(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n > m) throw ConfigError("hungarian: needs rows <= cols");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) assignment[p[j] - 1] = j - 1;
  return assignment;
}

struct LabelMatching {
  /// For each confusion column (estimated label), the matched row index or -1.
  std::vector<int> row_of_col;
  /// For each row (true label), the matched column index or -1.
  std::vector<int> col_of_row;
  int matched_trace = 0;

  /// Estimated labels with no true partner ("satellites").
  [[nodiscard]] std::vector<int> unmatched_cols() const {
    std::vector<int> out;
    for (std::size_t c = 0; c < row_of_col.size(); ++c)
      if (row_of_col[c] < 0) out.push_back(static_cast<int>(c));
    return out;
  }
};

/// Matching that maximizes the total of matched counts.
inline LabelMatching match_labels(const ConfusionMatrix& cm) {
  const auto R = static_cast<int>(cm.counts.rows());
  const auto C = static_cast<int>(cm.counts.cols());
  LabelMatching out;
  out.row_of_col.assign(static_cast<std::size_t>(C), -1);
  out.col_of_row.assign(static_cast<std::size_t>(R), -1);
  if (R == 0 || C == 0) return out;
  const bool transpose = R > C;
  Eigen::MatrixXd cost = -cm.counts.cast<double>();
  if (transpose) cost.transposeInPlace();
  const std::vector<int> a = hungarian_min(cost);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int r = transpose ? a[i] : static_cast<int>(i);
    const int c = transpose ? static_cast<int>(i) : a[i];
    if (r < 0 || c < 0) continue;
    out.col_of_row[r] = c;
    out.row_of_col[c] = r;
    out.matched_trace += cm.counts(r, c);
  }
  return out;
}

/// Per true cluster: matched count / cluster size (0 when unmatched).
inline std::vector<double> matched_recall(const ConfusionMatrix& cm, const LabelMatching& mt) {
  std::vector<double> out;
  for (Eigen::Index r = 0; r < cm.counts.rows(); ++r) {
    const int size = cm.counts.row(r).sum();
    const int c = mt.col_of_row[static_cast<std::size_t>(r)];
    out.push_back(size == 0 || c < 0 ? 0.0 : static_cast<double>(cm.counts(r, c)) / size);
  }
  return out;
}

/// (1/n) sum over estimated clusters of the largest true-label count.
inline double purity(const std::vector<int>& truth, const std::vector<int>& estimate) {
  if (truth.size() != estimate.size()) throw DataError("purity: label vectors differ in length");
  if (truth.empty()) return 1.0;
  const ConfusionMatrix cm = confusion_matrix(truth, estimate);
  int total = 0;
  for (Eigen::Index c = 0; c < cm.counts.cols(); ++c) total += cm.counts.col(c).maxCoeff();
  return static_cast<double>(total) / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------
// Surfaces

enum class SurfaceKind { total, mark0, mark1, prob };

inline std::string to_string(SurfaceKind k) {
  switch (k) {
    case SurfaceKind::total: return "total";
    case SurfaceKind::mark0: return "mark0";
    case SurfaceKind::mark1: return "mark1";
    case SurfaceKind::prob: return "prob";
  }
  return "?";
}

/// Regular lattice including the domain boundary; last axis fastest.
struct SurfaceGrid {
  std::vector<std::vector<double>> axes;
  std::vector<double> values;
  SurfaceKind kind = SurfaceKind::total;

  [[nodiscard]] int dims() const noexcept { return static_cast<int>(axes.size()); }
  [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
  /// Coordinates of node `flat`.
  [[nodiscard]] std::vector<double> point(std::size_t flat) const {
    std::vector<double> y(axes.size());
    for (std::size_t h = axes.size(); h-- > 0;) {
      y[h] = axes[h][flat % axes[h].size()];
      flat /= axes[h].size();
    }
    return y;
  }
};

inline SurfaceGrid make_lattice(const Domain& domain, int resolution, SurfaceKind kind) {
  if (resolution < 2) throw ConfigError("surface: resolution must be >= 2");
  SurfaceGrid g;
  g.kind = kind;
  std::size_t total = 1;
  for (const auto& iv : domain) {
    std::vector<double> ax(static_cast<std::size_t>(resolution));
    for (int t = 0; t < resolution; ++t) ax[t] = iv.lo + iv.length() * t / (resolution - 1.0);
    ax.back() = iv.hi;
    g.axes.push_back(std::move(ax));
    total *= static_cast<std::size_t>(resolution);
  }
  g.values.assign(total, 0.0);
  return g;
}

namespace detail {

template <class Fn>
SurfaceGrid fill_lattice(const Domain& domain, int resolution, SurfaceKind kind, Fn&& mark_values) {
  SurfaceGrid g = make_lattice(domain, resolution, kind);
  for (std::size_t f = 0; f < g.size(); ++f) {
    const std::vector<double> y = g.point(f);
    const auto [l0, l1] = mark_values(y);
    switch (kind) {
      case SurfaceKind::total: g.values[f] = l0 + l1; break;
      case SurfaceKind::mark0: g.values[f] = l0; break;
      case SurfaceKind::mark1: g.values[f] = l1; break;
      case SurfaceKind::prob: g.values[f] = (l0 + l1) > 0.0 ? l1 / (l0 + l1) : 0.5; break;
    }
  }
  return g;
}

}  // namespace detail

/// Plug-in surfaces lambda_km = (B^T theta_km)^2 and their total / mark
/// probability.
inline SurfaceGrid surface_grid(const std::array<Eigen::VectorXd, 2>& theta,
                                const TensorBasis& basis, int resolution, SurfaceKind kind) {
  for (const auto& t : theta)
    if (t.size() != basis.dim()) throw ConfigError("surface: theta length != basis dim");
  return detail::fill_lattice(basis.domain(), resolution, kind, [&](const std::vector<double>& y) {
    const Eigen::VectorXd b = basis.eval(y);
    const double s0 = b.dot(theta[0]), s1 = b.dot(theta[1]);
    return std::pair{s0 * s0, s1 * s1};
  });
}

/// Single-mark plug-in surface (B^T theta)^2.
inline SurfaceGrid surface_grid(const Eigen::VectorXd& theta, const TensorBasis& basis,
                                int resolution) {
  return surface_grid({theta, theta}, basis, resolution, SurfaceKind::mark0);
}

inline SurfaceGrid surface_from_intensity(const ClusterSpec& spec, int resolution, SurfaceKind kind) {
  return detail::fill_lattice(spec[0].domain(), resolution, kind, [&](const std::vector<double>& y) {
    return std::pair{spec[0](y), spec[1](y)};
  });
}

/// ||est - truth|| / ||truth|| with trapezoidal weights.
inline double surface_l2_error(const SurfaceGrid& est, const SurfaceGrid& truth) {
  if (est.axes != truth.axes || est.size() != truth.size())
    throw ConfigError("surface_l2_error: lattices differ");
  double num = 0.0, den = 0.0;
  for (std::size_t f = 0; f < truth.size(); ++f) {
    double w = 1.0;
    std::size_t rest = f;
    for (std::size_t h = truth.axes.size(); h-- > 0;) {
      const std::size_t n = truth.axes[h].size();
      const std::size_t t = rest % n;
      rest /= n;
      const double step = (truth.axes[h].back() - truth.axes[h].front()) / (n - 1.0);
      w *= (t == 0 || t + 1 == n) ? 0.5 * step : step;
    }
    const double e = est.values[f] - truth.values[f];
    num += w * e * e;
    den += w * truth.values[f] * truth.values[f];
  }
  if (!(den > 0.0)) throw DomainError("surface_l2_error: truth surface is identically zero");
  return std::sqrt(num / den);
}

// ---------------------------------------------------------------------------
// k-means baselines

struct KMeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centers;
  double inertia = 0.0;
};

/// Lloyd iterations from k-means++ seeds; best inertia over `restarts`.
inline KMeansResult kmeans(const Eigen::MatrixXd& x, int k, Rng& rng, int restarts = 20,
                           int max_iters = 300) {
  const Eigen::Index n = x.rows();
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (n == 0) return {};
  k = static_cast<int>(std::min<Eigen::Index>(k, n));
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int rep = 0; rep < restarts; ++rep) {
    Eigen::MatrixXd c(k, x.cols());
    std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    c.row(0) = x.row(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
    for (int j = 1; j < k; ++j) {
      double total = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        d2[i] = std::min(d2[i], (x.row(i) - c.row(j - 1)).squaredNorm());
        total += d2[i];
      }
      Eigen::Index pick = 0;
      if (total > 0.0) {
        double u = uniform01(rng) * total;
        for (pick = 0; pick < n - 1; ++pick) {
          u -= d2[pick];
          if (u < 0.0) break;
        }
      } else {
        pick = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
      }
      c.row(j) = x.row(pick);
    }
    std::vector<int> label(static_cast<std::size_t>(n), -1);
    double inertia = 0.0;
    for (int it = 0; it < max_iters; ++it) {
      bool changed = false;
      inertia = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        int arg = 0;
        double dmin = std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j) {
          const double dd = (x.row(i) - c.row(j)).squaredNorm();
          if (dd < dmin) {
            dmin = dd;
            arg = j;
          }
        }
        if (label[i] != arg) changed = true;
        label[i] = arg;
        inertia += dmin;
      }
      if (!changed && it > 0) break;
      Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, x.cols());
      std::vector<int> cnt(static_cast<std::size_t>(k), 0);
      for (Eigen::Index i = 0; i < n; ++i) {
        sum.row(label[i]) += x.row(i);
        ++cnt[label[i]];
      }
      for (int j = 0; j < k; ++j) {
        if (cnt[j] > 0) {
          c.row(j) = sum.row(j) / cnt[j];
        } else {
          // Reseed an empty center at the point farthest from its center.
          Eigen::Index far = 0;
          double dmax = -1.0;
          for (Eigen::Index i = 0; i < n; ++i) {
            const double dd = (x.row(i) - c.row(label[i])).squaredNorm();
            if (dd > dmax) {
              dmax = dd;
              far = i;
            }
          }
          c.row(j) = x.row(far);
        }
      }
    }
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.labels = label;
      best.centers = c;
    }
  }
  return best;
}

namespace detail {

inline void check_grid(const Dataset& data, int grid) {
  if (grid < 1) throw ConfigError("baseline: grid must be >= 1");
  if (data.dims() < 1) throw ConfigError("baseline: empty domain");
}

inline std::size_t cell_count(const Dataset& data, int grid) {
  std::size_t c = 1;
  for (int h = 0; h < data.dims(); ++h) c *= static_cast<std::size_t>(grid);
  return c;
}

}  // namespace detail

/// Offset-normalized counts per cell per mark (2 * grid^H columns).
inline Eigen::MatrixXd binned_features(const Dataset& data, int grid = 10) {
  detail::check_grid(data, grid);
  const std::size_t cells = detail::cell_count(data, grid);
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.n()),
                                            static_cast<Eigen::Index>(2 * cells));
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto& s = data.subjects[i];
    for (std::size_t j = 0; j < s.size(); ++j) {
      const auto y = s.point(j);
      std::size_t cell = 0;
      for (int h = 0; h < data.dims(); ++h) {
        const auto& iv = data.domain[static_cast<std::size_t>(h)];
        int b = static_cast<int>(std::floor((y[h] - iv.lo) / iv.length() * grid));
        b = std::clamp(b, 0, grid - 1);
        cell = cell * static_cast<std::size_t>(grid) + static_cast<std::size_t>(b);
      }
      f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s.marks[j] * cells + cell)) += 1.0;
    }
    f.row(static_cast<Eigen::Index>(i)) /= s.offset_t;
  }
  return f;
}

/// Silverman's rule per axis, 1.06 * sd * n^(-1/5), for one sample given
/// as an n x H matrix. Returns nothing when n < 2 or an axis has zero spread.
inline std::optional<std::vector<double>> silverman_bandwidth(const Eigen::MatrixXd& y) {
  const Eigen::Index n = y.rows();
  if (n < 2) return std::nullopt;
  std::vector<double> bw(static_cast<std::size_t>(y.cols()));
  for (Eigen::Index h = 0; h < y.cols(); ++h) {
    const double mean = y.col(h).mean();
    const double sd = std::sqrt((y.col(h).array() - mean).square().sum() / (n - 1.0));
    if (!(sd > 0.0)) return std::nullopt;
    bw[h] = 1.06 * sd * std::pow(static_cast<double>(n), -0.2);
  }
  return bw;
}

/// Fallback bandwidth for samples too small for their own rule: Silverman
/// on all events pooled, with n the mean events per subject and mark.
inline std::vector<double> pooled_kde_bandwidth(const Dataset& data) {
  const int H = data.dims();
  std::vector<double> bw(static_cast<std::size_t>(H));
  Eigen::MatrixXd all(static_cast<Eigen::Index>(data.total_events()), H);
  Eigen::Index row = 0;
  for (const auto& s : data.subjects)
    for (std::size_t j = 0; j < s.size(); ++j, ++row)
      for (int h = 0; h < H; ++h) all(row, h) = s.point(j)[h];
  const double nbar =
      std::max(1.0, static_cast<double>(data.total_events()) / (2.0 * std::max<std::size_t>(1, data.n())));
  for (int h = 0; h < H; ++h) {
    const double len = data.domain[static_cast<std::size_t>(h)].length();
    double sd = len / std::sqrt(12.0);
    if (all.rows() > 1) {
      const double mean = all.col(h).mean();
      const double v = (all.col(h).array() - mean).square().sum() / (all.rows() - 1.0);
      if (v > 0.0) sd = std::sqrt(v);
    }
    bw[h] = std::max(1.06 * sd * std::pow(nbar, -0.2), 1e-6 * len);
  }
  return bw;
}

/// Gaussian-kernel intensity per subject and mark, divided by T_i and
/// evaluated at the grid^H cell centers. `bandwidth` > 0 is used on every
/// axis; otherwise each (subject, mark) sample uses its own Silverman rule.
inline Eigen::MatrixXd kde_features(const Dataset& data, int grid, double bandwidth = 0.0) {
  detail::check_grid(data, grid);
  if (!std::isfinite(bandwidth)) throw ConfigError("kde: bandwidth must be finite");
  const int H = data.dims();
  const std::size_t cells = detail::cell_count(data, grid);
  std::vector<std::vector<double>> centers(cells, std::vector<double>(static_cast<std::size_t>(H)));
  for (std::size_t c = 0; c < cells; ++c) {
    std::size_t rest = c;
    for (int h = H - 1; h >= 0; --h) {
      const auto& iv = data.domain[static_cast<std::size_t>(h)];
      const std::size_t t = rest % static_cast<std::size_t>(grid);
      rest /= static_cast<std::size_t>(grid);
      centers[c][h] = iv.lo + iv.length() * (t + 0.5) / grid;
    }
  }
  const std::vector<double> pooled = bandwidth > 0.0
                                         ? std::vector<double>(static_cast<std::size_t>(H), bandwidth)
                                         : pooled_kde_bandwidth(data);
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.n()),
                                            static_cast<Eigen::Index>(2 * cells));
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto& s = data.subjects[i];
    for (int m = 0; m < 2; ++m) {
      Eigen::MatrixXd y(static_cast<Eigen::Index>(s.count(m)), H);
      Eigen::Index row = 0;
      for (std::size_t j = 0; j < s.size(); ++j) {
        if (s.marks[j] != m) continue;
        for (int h = 0; h < H; ++h) y(row, h) = s.point(j)[h];
        ++row;
      }
      std::vector<double> bw = pooled;
      if (bandwidth <= 0.0)
        if (auto own = silverman_bandwidth(y)) bw = std::move(*own);
      double norm = 1.0;
      for (const double b : bw) norm *= b * std::sqrt(2.0 * std::numbers::pi);
      for (Eigen::Index j = 0; j < y.rows(); ++j)
        for (std::size_t c = 0; c < cells; ++c) {
          double q = 0.0;
          for (int h = 0; h < H; ++h) {
            const double u = (centers[c][h] - y(j, h)) / bw[h];
            q += u * u;
          }
          f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m * cells + c)) +=
              std::exp(-0.5 * q) / norm;
        }
    }
    f.row(static_cast<Eigen::Index>(i)) /= s.offset_t;
  }
  return f;
}

inline std::vector<int> baseline_binned_kmeans(const Dataset& data, int grid, int k, Rng& rng) {
  return kmeans(binned_features(data, grid), k, rng).labels;
}

/// bandwidth <= 0 selects the per-sample Silverman rule.
inline std::vector<int> baseline_kde_kmeans(const Dataset& data, int grid, double bandwidth, int k,
                                            Rng& rng) {
  return kmeans(kde_features(data, grid, bandwidth), k, rng).labels;
}

struct BaselineLabels {
  std::vector<int> binned;
  std::vector<int> kde;
};

/// Both baselines with k supplied, on one stream: binned first, then KDE.
inline BaselineLabels run_baselines(const Dataset& data, int k, std::uint64_t seed, int grid = 10,
                                    double bandwidth = 0.0) {
  Rng rng = derive_stream(seed, 0xba5e, 0);
  BaselineLabels out;
  out.binned = baseline_binned_kmeans(data, grid, k, rng);
  out.kde = baseline_kde_kmeans(data, grid, bandwidth, k, rng);
  return out;
}

}  // namespace dpmppp
