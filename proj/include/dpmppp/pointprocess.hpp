#pragma once

// Replicated marked Poisson point processes: data containers, intensity
// specifications and thinning-based simulation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dpmppp/basis.hpp"
#include "dpmppp/errors.hpp"
#include "dpmppp/parallel.hpp"
#include "dpmppp/quadrature.hpp"
#include "dpmppp/rng.hpp"

namespace dpmppp {

using Domain = std::vector<Interval>;

inline double domain_volume(const Domain& domain) {
  double v = 1.0;
  for (const auto& iv : domain) v *= iv.length();
  return v;
}

inline void check_domain(const Domain& domain) {
  if (domain.empty()) throw ConfigError("domain: need at least one axis");
  for (const auto& iv : domain)
    if (!(iv.lo < iv.hi) || !std::isfinite(iv.lo) || !std::isfinite(iv.hi))
      throw ConfigError("domain: every axis needs finite lo < hi");
}

/// Flat list of points in R^dims.
struct Points {
  int dims = 0;
  std::vector<double> coords;

  [[nodiscard]] std::size_t size() const noexcept {
    return dims == 0 ? 0 : coords.size() / static_cast<std::size_t>(dims);
  }
  [[nodiscard]] std::span<const double> point(std::size_t j) const {
    return {coords.data() + j * static_cast<std::size_t>(dims), static_cast<std::size_t>(dims)};
  }
};

struct MarkedPattern {
  std::string subject_id;
  double offset_t = 1.0;
  int dims = 0;
  std::vector<double> coords;
  std::vector<int> marks;

  [[nodiscard]] std::size_t size() const noexcept { return marks.size(); }
  [[nodiscard]] std::span<const double> point(std::size_t j) const {
    return {coords.data() + j * static_cast<std::size_t>(dims), static_cast<std::size_t>(dims)};
  }
  void add(std::span<const double> y, int mark) {
    coords.insert(coords.end(), y.begin(), y.end());
    marks.push_back(mark);
  }
  [[nodiscard]] std::size_t count(int mark) const {
    return static_cast<std::size_t>(std::count(marks.begin(), marks.end(), mark));
  }
};

struct Dataset {
  Domain domain;
  std::vector<MarkedPattern> subjects;
  std::optional<std::vector<int>> true_labels;

  [[nodiscard]] int dims() const noexcept { return static_cast<int>(domain.size()); }
  [[nodiscard]] std::size_t n() const noexcept { return subjects.size(); }
  [[nodiscard]] std::size_t total_events() const noexcept {
    std::size_t t = 0;
    for (const auto& s : subjects) t += s.size();
    return t;
  }

  /// Throws DataError on the first violated invariant.
  void validate() const {
    check_domain(domain);
    const int H = dims();
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      const auto& s = subjects[i];
      const std::string who = "subject '" + s.subject_id + "'";
      if (s.dims != H) throw DataError(who + ": dimension mismatch");
      if (!(s.offset_t > 0.0) || !std::isfinite(s.offset_t))
        throw DataError(who + ": offset must be positive");
      if (s.coords.size() != s.marks.size() * static_cast<std::size_t>(H))
        throw DataError(who + ": coordinate/mark length mismatch");
      for (std::size_t j = 0; j < s.size(); ++j) {
        if (s.marks[j] != 0 && s.marks[j] != 1)
          throw DataError(who + ": mark must be 0 or 1 (event " + std::to_string(j) + ")");
        const auto y = s.point(j);
        for (int h = 0; h < H; ++h) {
          const auto& iv = domain[static_cast<std::size_t>(h)];
          const double slack = kDomainSlack * std::max(1.0, iv.length());
          if (!(y[h] >= iv.lo - slack && y[h] <= iv.hi + slack))
            throw DataError(who + ": event " + std::to_string(j) + " outside the domain");
        }
      }
    }
    if (true_labels && true_labels->size() != subjects.size())
      throw DataError("dataset: true_labels length differs from subject count");
  }
};

/// Nonnegative intensity with a declared upper bound on its domain.
class IntensitySpec {
public:
  using Fn = std::function<double(std::span<const double>)>;

  IntensitySpec() = default;

  /// Validates `bound` >= 1.01 * max of f over a regular grid with
  /// `grid_per_axis` nodes per axis (capped so the grid stays below 1e7 points).
  static IntensitySpec closed_form(Fn f, double bound, Domain domain, int grid_per_axis = 200) {
    check_domain(domain);
    if (!(bound >= 0.0) || !std::isfinite(bound))
      throw SpecificationError("intensity: bound must be finite and >= 0");
    IntensitySpec s;
    s.fn_ = std::move(f);
    s.bound_ = bound;
    s.domain_ = std::move(domain);
    s.validate_bound(grid_per_axis);
    return s;
  }

  static IntensitySpec constant(double rate, Domain domain) {
    if (!(rate >= 0.0)) throw DomainError("intensity: rate must be >= 0");
    check_domain(domain);
    IntensitySpec s;
    s.fn_ = [rate](std::span<const double>) { return rate; };
    s.bound_ = rate;
    s.domain_ = std::move(domain);
    return s;
  }

  /// lambda(y) = (B(y)^T theta)^2. Since B is a nonnegative partition of
  /// unity, |B(y)^T theta| <= max_j |theta_j|.
  static IntensitySpec squared_link(std::shared_ptr<const TensorBasis> basis,
                                    Eigen::VectorXd theta) {
    if (theta.size() != basis->dim()) throw ConfigError("intensity: theta length != basis dim");
    const double top = theta.cwiseAbs().maxCoeff();
    const int nnz = basis->nnz();
    auto f = [basis, theta = std::move(theta), nnz](std::span<const double> y) {
      std::vector<int> idx(static_cast<std::size_t>(nnz));
      std::vector<double> val(static_cast<std::size_t>(nnz));
      basis->eval_sparse(y, idx, val);
      double s = 0.0;
      for (int e = 0; e < nnz; ++e) s += val[e] * theta[idx[e]];
      return s * s;
    };
    return closed_form(std::move(f), 1.02 * top * top, basis->domain());
  }

  [[nodiscard]] double operator()(std::span<const double> y) const {
    return fn_ ? fn_(y) : 0.0;
  }
  [[nodiscard]] double bound() const noexcept { return bound_; }
  [[nodiscard]] const Domain& domain() const noexcept { return domain_; }
  [[nodiscard]] int dims() const noexcept { return static_cast<int>(domain_.size()); }

private:
  void validate_bound(int grid_per_axis) const {
    const int H = dims();
    int g = std::max(2, grid_per_axis);
    while (H > 1 && std::pow(static_cast<double>(g), H) > 1e7) --g;
    std::vector<int> digit(static_cast<std::size_t>(H), 0);
    std::vector<double> y(static_cast<std::size_t>(H));
    double top = 0.0;
    for (;;) {
      for (int h = 0; h < H; ++h) {
        const auto& iv = domain_[static_cast<std::size_t>(h)];
        y[h] = iv.lo + iv.length() * digit[h] / (g - 1.0);
      }
      const double v = fn_(y);
      if (!(v >= 0.0) || !std::isfinite(v))
        throw SpecificationError("intensity: negative or non-finite value on the validation grid");
      top = std::max(top, v);
      int h = H - 1;
      for (; h >= 0; --h) {
        if (++digit[h] < g) break;
        digit[h] = 0;
      }
      if (h < 0) break;
    }
    if (bound_ < 1.01 * top)
      throw SpecificationError("intensity: declared bound " + std::to_string(bound_) +
                               " lacks 1% headroom over grid maximum " + std::to_string(top));
  }

  Fn fn_;
  double bound_ = 0.0;
  Domain domain_;
};

/// Integral of the intensity over its domain by composite tensor
/// Gauss-Legendre quadrature.
inline double integrated_intensity(const IntensitySpec& spec, int panels = 16, int nodes = 8) {
  const int H = spec.dims();
  std::vector<quadrature::Rule> rules;
  for (const auto& iv : spec.domain()) {
    quadrature::Rule r;
    const double w = iv.length() / panels;
    for (int p = 0; p < panels; ++p) {
      const auto q = quadrature::gauss_legendre(nodes, iv.lo + p * w, iv.lo + (p + 1) * w);
      r.nodes.insert(r.nodes.end(), q.nodes.begin(), q.nodes.end());
      r.weights.insert(r.weights.end(), q.weights.begin(), q.weights.end());
    }
    rules.push_back(std::move(r));
  }
  const int m = panels * nodes;
  std::vector<int> digit(static_cast<std::size_t>(H), 0);
  std::vector<double> y(static_cast<std::size_t>(H));
  double total = 0.0;
  for (;;) {
    double w = 1.0;
    for (int h = 0; h < H; ++h) {
      y[h] = rules[h].nodes[digit[h]];
      w *= rules[h].weights[digit[h]];
    }
    total += w * spec(y);
    int h = H - 1;
    for (; h >= 0; --h) {
      if (++digit[h] < m) break;
      digit[h] = 0;
    }
    if (h < 0) break;
  }
  return total;
}

/// N ~ Poisson(rate * |B|), points i.i.d. uniform on B.
inline Points sample_homogeneous(double rate, const Domain& domain, Rng& rng) {
  if (!(rate >= 0.0) || !std::isfinite(rate)) throw DomainError("sample_homogeneous: rate must be >= 0");
  check_domain(domain);
  Points pts{static_cast<int>(domain.size()), {}};
  const double mean = rate * domain_volume(domain);
  if (mean == 0.0) return pts;
  const auto n = std::poisson_distribution<std::int64_t>(mean)(rng);
  pts.coords.reserve(static_cast<std::size_t>(n) * domain.size());
  for (std::int64_t j = 0; j < n; ++j)
    for (const auto& iv : domain) pts.coords.push_back(iv.lo + iv.length() * uniform01(rng));
  return pts;
}

/// Thinning: homogeneous at T * bound, keep y with probability lambda(y) / bound.
inline Points sample_inhomogeneous(const IntensitySpec& spec, double scale, Rng& rng) {
  if (!(scale >= 0.0)) throw DomainError("sample_inhomogeneous: scale must be >= 0");
  const Points cand = sample_homogeneous(scale * spec.bound(), spec.domain(), rng);
  Points out{cand.dims, {}};
  for (std::size_t j = 0; j < cand.size(); ++j) {
    const auto y = cand.point(j);
    const double lam = spec(y);
    if (lam > spec.bound())
      throw SpecificationError("intensity exceeds its declared bound during thinning");
    if (uniform01(rng) * spec.bound() < lam) out.coords.insert(out.coords.end(), y.begin(), y.end());
  }
  return out;
}

/// Per-mark intensities of one cluster.
using ClusterSpec = std::array<IntensitySpec, 2>;

inline std::string subject_name(std::size_t i) {
  std::string digits = std::to_string(i + 1);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return "s" + digits;
}

/// Draws cluster labels by `sizes` (in shuffled order), offsets uniform on
/// `offset_range`, and two independent processes per subject. Subject i
/// uses its own RNG stream derived from (seed, i).
inline Dataset generate_dataset(const std::vector<ClusterSpec>& clusters,
                                const std::vector<int>& sizes,
                                std::pair<double, double> offset_range, std::uint64_t seed,
                                int jobs = 1) {
  if (clusters.empty()) throw ConfigError("generate_dataset: no clusters");
  if (sizes.size() != clusters.size())
    throw ConfigError("generate_dataset: sizes must align with clusters");
  const auto [t_lo, t_hi] = offset_range;
  if (!(t_lo > 0.0) || !(t_hi >= t_lo) || !std::isfinite(t_hi))
    throw ConfigError("generate_dataset: offset range needs 0 < lo <= hi");
  const Domain domain = clusters.front()[0].domain();
  check_domain(domain);
  for (const auto& c : clusters)
    for (const auto& s : c)
      if (s.dims() != static_cast<int>(domain.size()))
        throw ConfigError("generate_dataset: all intensities must share the domain");

  std::vector<int> labels;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] < 0) throw ConfigError("generate_dataset: negative cluster size");
    labels.insert(labels.end(), static_cast<std::size_t>(sizes[k]), static_cast<int>(k));
  }
  Rng order = derive_stream(seed, 0x5eed);
  for (std::size_t i = labels.size(); i > 1; --i) {
    const auto j = std::uniform_int_distribution<std::size_t>(0, i - 1)(order);
    std::swap(labels[i - 1], labels[j]);
  }

  Dataset data;
  data.domain = domain;
  data.subjects.resize(labels.size());
  parallel_for(labels.size(), jobs, [&](std::size_t i) {
    Rng rng = derive_stream(seed, 1, i);
    MarkedPattern& s = data.subjects[i];
    s.subject_id = subject_name(i);
    s.dims = static_cast<int>(domain.size());
    s.offset_t = t_lo + (t_hi - t_lo) * uniform01(rng);
    for (int m = 0; m < 2; ++m) {
      const Points pts = sample_inhomogeneous(clusters[static_cast<std::size_t>(labels[i])][m],
                                              s.offset_t, rng);
      for (std::size_t j = 0; j < pts.size(); ++j) s.add(pts.point(j), m);
    }
  });
  data.true_labels = std::move(labels);
  return data;
}

}  // namespace dpmppp
