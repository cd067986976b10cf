#pragma once

// Tensor-product B-spline bases on hyper-rectangles.
//
// Knot vectors are clamped (boundary knots repeated degree+1 times) with
// equally spaced interior knots, so every axis basis is nonnegative and a
// partition of unity on the closed interval. The tensor product inherits
// both properties, which is what makes the coefficient box theta_j >= delta
// a subset of the positive chamber {inf_y B(y)^T theta >= delta}.
//
// Flat tensor index: the last axis varies fastest, so the mass matrix is
// M_0 (x) M_1 (x) ... and the penalty is the matching Kronecker sum.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dpmppp/errors.hpp"
#include "dpmppp/quadrature.hpp"

namespace dpmppp {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
  [[nodiscard]] double length() const noexcept { return hi - lo; }
};

/// Absolute slack (scaled by the interval length) for points just outside
/// the domain; such points are clamped onto the boundary.
inline constexpr double kDomainSlack = 1e-12;

class Basis1D {
public:
  Basis1D(int degree, int n_interior, double lo, double hi)
      : degree_(degree), n_interior_(n_interior), domain_{lo, hi} {
    if (degree < 0 || degree > 30) throw ConfigError("basis: degree must be in [0, 30]");
    if (n_interior < 0) throw ConfigError("basis: interior knot count must be >= 0");
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
      throw ConfigError("basis: domain requires finite lo < hi");
    dim_ = n_interior + degree + 1;
    knots_.reserve(static_cast<std::size_t>(dim_ + degree + 1));
    for (int i = 0; i <= degree; ++i) knots_.push_back(lo);
    for (int i = 1; i <= n_interior; ++i)
      knots_.push_back(lo + (hi - lo) * i / (n_interior + 1.0));
    for (int i = 0; i <= degree; ++i) knots_.push_back(hi);
  }

  [[nodiscard]] int degree() const noexcept { return degree_; }
  [[nodiscard]] int n_interior() const noexcept { return n_interior_; }
  [[nodiscard]] int dim() const noexcept { return dim_; }
  [[nodiscard]] const Interval& domain() const noexcept { return domain_; }
  [[nodiscard]] const std::vector<double>& knots() const noexcept { return knots_; }
  [[nodiscard]] std::span<const double> interior_knots() const noexcept {
    return {knots_.data() + degree_ + 1, static_cast<std::size_t>(n_interior_)};
  }

  /// Clamp y into the domain, or throw if it lies beyond the slack.
  [[nodiscard]] double clamp(double y) const {
    const double slack = kDomainSlack * std::max(1.0, domain_.length());
    if (!(y >= domain_.lo - slack && y <= domain_.hi + slack))
      throw DomainError("basis: point " + std::to_string(y) + " outside [" +
                        std::to_string(domain_.lo) + ", " +
                        std::to_string(domain_.hi) + "]");
    return std::clamp(y, domain_.lo, domain_.hi);
  }

  /// Writes the degree+1 functions that can be nonzero at y into `out` and
  /// returns the index of the first one.
  int eval_local(double y, std::span<double> out) const {
    y = clamp(y);
    const int p = degree_;
    const int span = find_span(y);
    double left[32];
    double right[32];
    out[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
      left[j] = y - knots_[span + 1 - j];
      right[j] = knots_[span + j] - y;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double temp = out[r] / (right[r + 1] + left[j - r]);
        out[r] = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      out[j] = saved;
    }
    return span - p;
  }

  [[nodiscard]] Eigen::VectorXd eval(double y) const {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dim_);
    std::vector<double> local(static_cast<std::size_t>(degree_ + 1));
    const int first = eval_local(y, local);
    for (int a = 0; a <= degree_; ++a) b[first + a] = local[a];
    return b;
  }

  /// Exact Gram matrix via (degree+1)-point Gauss-Legendre on every knot cell.
  [[nodiscard]] Eigen::MatrixXd mass_matrix() const {
    const int p = degree_;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim_, dim_);
    std::vector<double> local(static_cast<std::size_t>(p + 1));
    for (int c = p; c < dim_; ++c) {
      const double a = knots_[c];
      const double b = knots_[c + 1];
      if (!(b > a)) continue;
      const auto rule = quadrature::gauss_legendre(p + 1, a, b);
      for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
        const int first = eval_local(rule.nodes[q], local);
        for (int i = 0; i <= p; ++i)
          for (int j = 0; j <= p; ++j)
            m(first + i, first + j) += rule.weights[q] * local[i] * local[j];
      }
    }
    return m;
  }

  /// D1^T D1 for the first-difference operator D1 on the coefficients.
  [[nodiscard]] Eigen::MatrixXd first_difference_penalty() const {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(dim_, dim_);
    for (int i = 0; i + 1 < dim_; ++i) {
      p(i, i) += 1.0;
      p(i + 1, i + 1) += 1.0;
      p(i, i + 1) -= 1.0;
      p(i + 1, i) -= 1.0;
    }
    return p;
  }

private:
  [[nodiscard]] int find_span(double y) const {
    if (y >= domain_.hi) return dim_ - 1;
    const auto first = knots_.begin() + degree_ + 1;
    const auto last = knots_.begin() + dim_ + 1;
    return static_cast<int>(std::upper_bound(first, last, y) - knots_.begin()) - 1;
  }

  int degree_;
  int n_interior_;
  Interval domain_;
  int dim_;
  std::vector<double> knots_;
};

inline Basis1D build_basis_1d(int degree, int n_interior, double lo, double hi) {
  return Basis1D(degree, n_interior, lo, hi);
}

class TensorBasis {
public:
  explicit TensorBasis(std::vector<Basis1D> axes) : axes_(std::move(axes)) {
    if (axes_.empty()) throw ConfigError("basis: need at least one axis");
    dim_ = 1;
    nnz_ = 1;
    for (const auto& ax : axes_) {
      dim_ *= ax.dim();
      nnz_ *= ax.degree() + 1;
    }
    strides_.assign(axes_.size(), 1);
    for (int h = static_cast<int>(axes_.size()) - 2; h >= 0; --h)
      strides_[h] = strides_[h + 1] * axes_[h + 1].dim();
  }

  /// Same degree and interior-knot count on every axis of `domain`.
  static TensorBasis uniform(int degree, int n_interior,
                             const std::vector<Interval>& domain) {
    std::vector<Basis1D> axes;
    axes.reserve(domain.size());
    for (const auto& iv : domain) axes.push_back(build_basis_1d(degree, n_interior, iv.lo, iv.hi));
    return TensorBasis(std::move(axes));
  }

  [[nodiscard]] int dims() const noexcept { return static_cast<int>(axes_.size()); }
  [[nodiscard]] int dim() const noexcept { return dim_; }
  /// Entries written by eval_sparse: prod_h (degree_h + 1).
  [[nodiscard]] int nnz() const noexcept { return nnz_; }
  [[nodiscard]] const std::vector<Basis1D>& axes() const noexcept { return axes_; }

  [[nodiscard]] std::vector<Interval> domain() const {
    std::vector<Interval> d;
    for (const auto& ax : axes_) d.push_back(ax.domain());
    return d;
  }

  [[nodiscard]] double volume() const noexcept {
    double v = 1.0;
    for (const auto& ax : axes_) v *= ax.domain().length();
    return v;
  }

  /// Writes nnz() (index, value) pairs for the functions supported at y.
  /// Some values may be exactly zero at knots.
  void eval_sparse(std::span<const double> y, std::span<int> index,
                   std::span<double> value) const {
    if (static_cast<int>(y.size()) != dims())
      throw DomainError("basis: point dimension does not match the basis");
    const int H = dims();
    double local[8][32];
    int first[8];
    int count[8];
    if (H > 8) throw ConfigError("basis: at most 8 axes supported");
    for (int h = 0; h < H; ++h) {
      first[h] = axes_[h].eval_local(y[h], std::span<double>(local[h], 32));
      count[h] = axes_[h].degree() + 1;
    }
    int digit[8] = {0};
    for (int e = 0; e < nnz_; ++e) {
      int flat = 0;
      double v = 1.0;
      for (int h = 0; h < H; ++h) {
        flat += (first[h] + digit[h]) * strides_[h];
        v *= local[h][digit[h]];
      }
      index[e] = flat;
      value[e] = v;
      for (int h = H - 1; h >= 0; --h) {
        if (++digit[h] < count[h]) break;
        digit[h] = 0;
      }
    }
  }

  [[nodiscard]] Eigen::VectorXd eval(std::span<const double> y) const {
    std::vector<int> idx(static_cast<std::size_t>(nnz_));
    std::vector<double> val(static_cast<std::size_t>(nnz_));
    eval_sparse(y, idx, val);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dim_);
    for (int e = 0; e < nnz_; ++e) b[idx[e]] += val[e];
    return b;
  }

private:
  std::vector<Basis1D> axes_;
  std::vector<int> strides_;
  int dim_ = 0;
  int nnz_ = 0;
};

/// M = int_B B(y) B(y)^T dy.
struct MassMatrix {
  Eigen::MatrixXd m;
};

/// First-order P-spline penalty with its rank and log pseudo-determinant.
struct PenaltyMatrix {
  Eigen::MatrixXd omega;
  int rank = 0;
  double log_pdet = 0.0;
};

inline Eigen::MatrixXd kronecker(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd k(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return k;
}

inline MassMatrix mass_matrix(const TensorBasis& basis) {
  Eigen::MatrixXd m = basis.axes().front().mass_matrix();
  for (std::size_t h = 1; h < basis.axes().size(); ++h)
    m = kronecker(m, basis.axes()[h].mass_matrix());
  return {std::move(m)};
}

/// Kronecker sum of per-axis D1^T D1; rank and log|Omega|_+ from the
/// eigenvalues above 1e-10 * lambda_max.
inline PenaltyMatrix penalty_matrix(const TensorBasis& basis, int order = 1) {
  if (order != 1) throw ConfigError("penalty: only first-order differences are supported");
  const auto& axes = basis.axes();
  const int d = basis.dim();
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t h = 0; h < axes.size(); ++h) {
    Eigen::MatrixXd term = Eigen::MatrixXd::Identity(1, 1);
    for (std::size_t g = 0; g < axes.size(); ++g) {
      const Eigen::MatrixXd factor =
          g == h ? axes[g].first_difference_penalty()
                 : Eigen::MatrixXd::Identity(axes[g].dim(), axes[g].dim());
      term = kronecker(term, factor);
    }
    omega += term;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(omega, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double cutoff = 1e-10 * std::max(ev.maxCoeff(), 0.0);
  PenaltyMatrix out{std::move(omega), 0, 0.0};
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] > cutoff && ev[i] > 0.0) {
      ++out.rank;
      out.log_pdet += std::log(ev[i]);
    }
  }
  return out;
}

}  // namespace dpmppp
