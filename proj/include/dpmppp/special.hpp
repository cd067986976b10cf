#pragma once

// Special functions used by the ELBO and the coordinate updates.
//
// The Gaussian expectation H(mu, s2) = E[log X^2], X ~ N(mu, s2), is written
// through the kernel G~(z), z = -mu^2 / (2 s2) <= 0:
//
//   H(mu, s2) = -G~(z) + log(s2 / 2) - C_E.
//
// X^2 / s2 is noncentral chi-square with one degree of freedom, which is a
// Poisson(x = -z) mixture of central chi-squares with 1 + 2k degrees of
// freedom. That gives the positive-term series
//
//   G~(z) = -sum_k Pois(k; x) * [psi(k + 1/2) - psi(1/2)],
//
// which is the Kummer-transformed form of the 1F1 parameter-derivative
// series (its Taylor expansion at 0 is 2z * 2F2(1,1; 3/2,2; z)). The
// alternating Taylor form loses ~x/ln(10) digits, so it is not used. For
// x > 30 we switch to the asymptotic expansion of E[log(1 + eps Z)^2].

#include <cmath>
#include <cstdint>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "dpmppp/errors.hpp"

namespace dpmppp::special {

inline constexpr double kEulerGamma = 0.57721566490153286061;
inline constexpr double kLn2 = 0.69314718055994530942;

/// Beyond this |z| the asymptotic branch of G~ is used.
inline constexpr double kSeriesSwitch = 30.0;

enum class HRegime { series, asymptotic, closed_form_mu_zero };

struct HValue {
  double value;
  HRegime regime;
};

inline double digamma(double x) {
  if (!(x > 0.0)) throw DomainError("digamma: argument must be > 0");
  return boost::math::digamma(x);
}

inline double log_gamma(double x) {
  if (!(x > 0.0)) throw DomainError("log_gamma: argument must be > 0");
  return boost::math::lgamma(x);
}

namespace detail {

// -sum_k Pois(k; x) * sum_{j<k} 2/(2j+1), all terms nonnegative.
inline double g_tilde_series(double x) {
  if (x == 0.0) return 0.0;
  double p = std::exp(-x);  // Pois(0; x)
  double harmonic = 0.0;    // psi(k + 1/2) - psi(1/2)
  double sum = 0.0;
  const auto k_max = static_cast<std::int64_t>(x + 40.0 + 12.0 * std::sqrt(x));
  for (std::int64_t k = 1; k <= k_max; ++k) {
    harmonic += 2.0 / (2.0 * static_cast<double>(k) - 1.0);
    p *= x / static_cast<double>(k);
    const double term = p * harmonic;
    sum += term;
    if (static_cast<double>(k) > x && term < 1e-18 * sum) break;
  }
  return -sum;
}

// sum_{k>=1} (2k-1)!! / (k (2x)^k), truncated at its smallest term.
inline double log_square_correction(double x) {
  double u = 1.0 / (2.0 * x);
  double sum = 0.0;
  double prev = HUGE_VAL;
  for (int k = 1; k < 200; ++k) {
    const double term = u / k;
    if (term > prev) break;
    sum += term;
    if (term < 1e-18 * sum) break;
    prev = term;
    u *= (2.0 * k + 1.0) / (2.0 * x);
  }
  return sum;
}

inline double g_tilde_asymptotic(double x) {
  return -std::log(x) - 2.0 * kLn2 - kEulerGamma + log_square_correction(x);
}

}  // namespace detail

/// G~(z) for z <= 0.
inline double g_tilde(double z) {
  if (!(z <= 0.0)) throw DomainError("g_tilde: argument must be <= 0");
  const double x = -z;
  return x <= kSeriesSwitch ? detail::g_tilde_series(x)
                            : detail::g_tilde_asymptotic(x);
}

/// E[log X^2] for X ~ N(mu, sigma2).
inline HValue expected_log_square(double mu, double sigma2) {
  if (!(sigma2 > 0.0))
    throw DomainError("expected_log_square: variance must be > 0");
  const double mu2 = mu * mu;
  if (mu2 == 0.0)
    return {std::log(sigma2 / 2.0) - kEulerGamma, HRegime::closed_form_mu_zero};
  const double x = mu2 / (2.0 * sigma2);
  if (x <= kSeriesSwitch) {
    return {-detail::g_tilde_series(x) + std::log(sigma2 / 2.0) - kEulerGamma,
            HRegime::series};
  }
  // log(mu^2) - S(x), algebraically equal to the G~ form but without the
  // cancellation between log(sigma2) and log(x).
  return {std::log(mu2) - detail::log_square_correction(x), HRegime::asymptotic};
}

}  // namespace dpmppp::special
