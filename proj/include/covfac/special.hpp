#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

namespace covfac {

// Regularized lower incomplete gamma P(a,x); series for x < a+1,
// continued fraction for the complement otherwise.
inline double gamma_p(double a, double x) {
  if (a <= 0.0 || x < 0.0) throw std::invalid_argument("gamma_p: bad args");
  if (x == 0.0) return 0.0;
  const double gln = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int i = 0; i < 1000; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - gln);
  }
  // Lentz continued fraction for Q(a,x)
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i <= 1000; ++i) {
    double an = -static_cast<double>(i) * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  double q = std::exp(-x + a * std::log(x) - gln) * h;
  return 1.0 - q;
}

inline double gamma_q(double a, double x) { return 1.0 - gamma_p(a, x); }

// log of the upper regularized incomplete gamma, stable for tiny tails
inline double log_gamma_q(double a, double x) {
  if (x < a + 1.0) {
    double q = gamma_q(a, x);
    return std::log(q);
  }
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i <= 2000; ++i) {
    double an = -static_cast<double>(i) * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  return -x + a * std::log(x) - std::lgamma(a) + std::log(h);
}

// log of the lower regularized incomplete gamma, stable when P is tiny
inline double log_gamma_p(double a, double x) {
  if (x >= a + 1.0) return std::log(gamma_p(a, x));
  double ap = a, sum = 1.0 / a, del = sum;
  for (int i = 0; i < 2000; ++i) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
  }
  return std::log(sum) - x + a * std::log(x) - std::lgamma(a);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double laplace_cdf(double x, double scale) {
  if (x < 0) return 0.5 * std::exp(x / scale);
  return 1.0 - 0.5 * std::exp(-x / scale);
}

// CDF of the inverse-gamma(a, b) law at x > 0
inline double invgamma_cdf(double x, double a, double b) {
  if (x <= 0.0) return 0.0;
  return gamma_q(a, b / x);
}

inline double invgamma_logpdf(double x, double a, double b) {
  if (x <= 0.0) return -std::numeric_limits<double>::infinity();
  return a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
}

inline double gamma_logpdf(double x, double a, double b) {  // shape a, rate b
  if (x <= 0.0) return -std::numeric_limits<double>::infinity();
  return a * std::log(b) - std::lgamma(a) + (a - 1.0) * std::log(x) - b * x;
}

inline double laplace_logpdf(double x, double scale) {
  return -std::log(2.0 * scale) - std::fabs(x) / scale;
}

// log of \int_0^inf s^{kappa-1} exp(-(chi/s + psi*s)/2) ds, the giG
// normalizer 2 (chi/psi)^{kappa/2} K_kappa(sqrt(chi psi)). Evaluated by
// Laplace-centered quadrature in log-space so it stays finite for |kappa|
// in the thousands and extreme chi.
inline double log_gig_normalizer(double kappa, double chi, double psi) {
  if (chi <= 0.0 || psi <= 0.0)
    throw std::invalid_argument("log_gig_normalizer: chi, psi must be > 0");
  // integrand in u = log s: exp(kappa u - (chi e^{-u} + psi e^u)/2)
  auto logf = [&](double u) {
    return kappa * u - 0.5 * (chi * std::exp(-u) + psi * std::exp(u));
  };
  // mode of the u-integrand: kappa + (chi e^{-u} - psi e^u)/2 = 0
  // solve for t = e^u: psi t^2 - 2 kappa t - chi = 0
  double disc = std::sqrt(kappa * kappa + psi * chi);
  // conjugate form avoids cancellation when kappa is large and negative
  double t = kappa >= 0.0 ? (kappa + disc) / psi : chi / (disc - kappa);
  double u0 = std::log(t);
  // curvature at the mode gives a step size
  double curv = 0.5 * (chi * std::exp(-u0) + psi * std::exp(u0));
  double h = 0.5 / std::sqrt(std::max(curv, 1e-8));
  h = std::min(h, 0.5);
  const double lf0 = logf(u0);
  double sum = 1.0;
  for (int dir = -1; dir <= 1; dir += 2) {
    for (int i = 1; i < 4000; ++i) {
      double term = std::exp(logf(u0 + dir * h * i) - lf0);
      sum += term;
      if (term < 1e-18 && i > 4) break;
    }
  }
  return lf0 + std::log(sum * h);
}

}  // namespace covfac
