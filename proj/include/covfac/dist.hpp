#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "covfac/matlin.hpp"
#include "covfac/rng.hpp"
#include "covfac/special.hpp"

namespace covfac {

inline double sample_normal(RngHandle& rng) {
  double u1 = rng.uniform(), u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline double sample_exponential(double rate, RngHandle& rng) {
  if (rate <= 0.0) throw std::invalid_argument("sample_exponential: rate <= 0");
  return -std::log(rng.uniform()) / rate;
}

// Laplace draw with E|X| = scale
inline double sample_de(double scale, RngHandle& rng) {
  if (scale <= 0.0) throw std::invalid_argument("sample_de: scale <= 0");
  double e = -std::log(rng.uniform());
  double s = rng.uniform() < 0.5 ? -1.0 : 1.0;
  return s * scale * e;
}

// Marsaglia-Tsang; unit rate
inline double sample_gamma(double shape, RngHandle& rng) {
  if (shape <= 0.0) throw std::invalid_argument("sample_gamma: shape <= 0");
  if (shape < 1.0) {
    double g = sample_gamma(shape + 1.0, rng);
    return g * std::pow(rng.uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = sample_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

// log of a unit-rate gamma draw; stable for very small shapes
inline double sample_log_gamma(double shape, RngHandle& rng) {
  if (shape >= 0.02) return std::log(sample_gamma(shape, rng));
  double g = sample_gamma(shape + 1.0, rng);
  return std::log(g) + std::log(rng.uniform()) / shape;
}

inline double sample_beta(double a, double b, RngHandle& rng) {
  double x = sample_gamma(a, rng), y = sample_gamma(b, rng);
  return x / (x + y);
}

inline std::vector<double> sample_dirichlet(const std::vector<double>& alphas,
                                            RngHandle& rng) {
  if (alphas.empty()) throw std::invalid_argument("sample_dirichlet: empty alphas");
  std::vector<double> lg(alphas.size());
  double lmax = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (alphas[i] <= 0.0)
      throw std::invalid_argument("sample_dirichlet: nonpositive alpha");
    lg[i] = sample_log_gamma(alphas[i], rng);
    lmax = std::max(lmax, lg[i]);
  }
  double denom = 0.0;
  for (double v : lg) denom += std::exp(v - lmax);
  std::vector<double> out(alphas.size());
  for (std::size_t i = 0; i < alphas.size(); ++i)
    out[i] = std::exp(lg[i] - lmax) / denom;
  return out;
}

// Inverse-gamma(a, b), optionally truncated to [lo, hi].
inline double sample_invgamma(double a, double b, RngHandle& rng) {
  if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("sample_invgamma: bad params");
  return b / sample_gamma(a, rng);
}

inline double sample_invgamma_trunc(double a, double b, double lo, double hi,
                                    RngHandle& rng) {
  if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("sample_invgamma: bad params");
  if (!(lo < hi) || hi <= 0.0)
    throw std::invalid_argument("sample_invgamma: empty truncation interval");
  lo = std::max(lo, 0.0);
  double flo = lo <= 0.0 ? 0.0 : invgamma_cdf(lo, a, b);
  double fhi = std::isinf(hi) ? 1.0 : invgamma_cdf(hi, a, b);
  double mass = fhi - flo;
  if (mass < 1e-300)
    throw std::runtime_error("sample_invgamma: truncation mass underflow");
  if (mass > 0.1) {  // rejection from the untruncated law
    for (int it = 0; it < 10000; ++it) {
      double x = b / sample_gamma(a, rng);
      if (x >= lo && x <= hi) return x;
    }
    throw std::runtime_error("sample_invgamma: rejection stalled");
  }
  // inverse CDF via bisection on a bracketed interval
  double u = flo + rng.uniform() * mass;
  double l = lo > 0.0 ? lo : 1e-300;
  double h = std::isinf(hi) ? b / a * 1e6 + 1e6 : hi;
  while (invgamma_cdf(h, a, b) < u) h *= 2.0;
  for (int it = 0; it < 200; ++it) {
    double m = 0.5 * (l + h);
    if (invgamma_cdf(m, a, b) < u)
      l = m;
    else
      h = m;
  }
  return 0.5 * (l + h);
}

// Inverse-Gaussian(mu, shape) via Michael-Schucany-Haas
inline double sample_invgauss(double mu, double shape, RngHandle& rng) {
  if (mu <= 0.0 || shape <= 0.0) throw std::invalid_argument("sample_invgauss: bad params");
  // scale out mu (X ~ IG(mu, shape) equals mu * IG(1, shape/mu)); at mu = 1
  // the two quantile-equation roots multiply to 1, so the small root is the
  // reciprocal of the cancellation-free large root
  const double lam = shape / mu;
  double nu = sample_normal(rng);
  double y = nu * nu;
  double xplus = 1.0 + (y + std::sqrt(y * (y + 4.0 * lam))) / (2.0 * lam);
  double x = 1.0 / xplus;
  double u = rng.uniform();
  return mu * (u <= 1.0 / (1.0 + x) ? x : xplus);
}

namespace detail {

// ratio-of-uniforms without mode shift; two-parameter giG(lambda, omega, omega)
inline double gig_rou_noshift(double lambda, double omega, RngHandle& rng) {
  const double t = 0.5 * (lambda - 1.0);
  const double s = 0.25 * omega;
  const double xm = (lambda - 1.0 + std::sqrt((lambda - 1.0) * (lambda - 1.0) +
                                              omega * omega)) /
                    omega;
  const double nc = t * std::log(xm) - s * (xm + 1.0 / xm);
  const double ym = (lambda + 1.0 + std::sqrt((lambda + 1.0) * (lambda + 1.0) +
                                              omega * omega)) /
                    omega;
  const double um =
      std::exp(0.5 * (lambda + 1.0) * std::log(ym) - s * (ym + 1.0 / ym) - nc);
  for (;;) {
    double u = um * rng.uniform();
    double v = rng.uniform();
    double x = u / v;
    if (std::log(v) <= t * std::log(x) - s * (x + 1.0 / x) - nc) return x;
  }
}

// ratio-of-uniforms with mode shift (Dagpunar), for large lambda or omega
inline double gig_rou_shift(double lambda, double omega, RngHandle& rng) {
  const double t = 0.5 * (lambda - 1.0);
  const double s = 0.25 * omega;
  const double xm = (lambda - 1.0 + std::sqrt((lambda - 1.0) * (lambda - 1.0) +
                                              omega * omega)) /
                    omega;
  const double nc = t * std::log(xm) - s * (xm + 1.0 / xm);
  // cubic x^3 + a x^2 + b x + xm = 0 locates the u-extrema
  const double a = -(2.0 * (lambda + 1.0) / omega + xm);
  const double b = 2.0 * (lambda - 1.0) * xm / omega - 1.0;
  const double p = b - a * a / 3.0;
  const double q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + xm;
  const double fi = std::acos(std::clamp(-q / (2.0 * std::sqrt(-p * p * p / 27.0)), -1.0, 1.0));
  const double fak = 2.0 * std::sqrt(-p / 3.0);
  const double y1 = fak * std::cos(fi / 3.0) - a / 3.0;
  const double y2 = fak * std::cos(fi / 3.0 + 4.0 * M_PI / 3.0) - a / 3.0;
  const double uplus =
      (y1 - xm) * std::exp(t * std::log(y1) - s * (y1 + 1.0 / y1) - nc);
  const double uminus =
      (y2 - xm) * std::exp(t * std::log(y2) - s * (y2 + 1.0 / y2) - nc);
  for (;;) {
    double u = uminus + rng.uniform() * (uplus - uminus);
    double v = rng.uniform();
    double x = u / v + xm;
    if (x > 0.0 &&
        std::log(v) <= t * std::log(x) - s * (x + 1.0 / x) - nc)
      return x;
  }
}

// three-piece rejection of Hormann & Leydold for 0 <= lambda < 1, small omega
inline double gig_three_piece(double lambda, double omega, RngHandle& rng) {
  const double xm =
      omega / (1.0 - lambda +
               std::sqrt((1.0 - lambda) * (1.0 - lambda) + omega * omega));
  const double x0 = omega / (1.0 - lambda);
  auto logg = [&](double x) {
    return (lambda - 1.0) * std::log(x) - 0.5 * omega * (x + 1.0 / x);
  };
  const double k0 = std::exp(logg(xm));
  const double a0 = k0 * x0;
  double k1 = 0.0, a1 = 0.0;
  const double xtail = std::max(x0, 2.0 / omega);
  if (x0 < 2.0 / omega) {
    k1 = std::exp(-omega);
    a1 = (lambda == 0.0)
             ? k1 * std::log(2.0 / (omega * x0))
             : k1 / lambda *
                   (std::pow(2.0 / omega, lambda) - std::pow(x0, lambda));
  }
  const double k2 = std::pow(xtail, lambda - 1.0);
  const double a2 = k2 * 2.0 / omega * std::exp(-0.5 * omega * xtail);
  const double atot = a0 + a1 + a2;
  for (;;) {
    double u = rng.uniform() * atot;
    double x, logh;
    if (u < a0) {
      x = x0 * u / a0;
      logh = std::log(k0);
    } else if (u < a0 + a1) {
      double w = (u - a0) / a1;
      if (lambda == 0.0)
        x = x0 * std::exp(w * std::log(2.0 / (omega * x0)));
      else
        x = std::pow(std::pow(x0, lambda) +
                         w * (std::pow(2.0 / omega, lambda) -
                              std::pow(x0, lambda)),
                     1.0 / lambda);
      logh = std::log(k1) + (lambda - 1.0) * std::log(x);
    } else {
      x = xtail - 2.0 / omega * std::log(rng.uniform());
      logh = std::log(k2) - 0.5 * omega * x;
    }
    if (std::log(rng.uniform()) <= logg(x) - logh) return x;
  }
}

// gamma proposal with exp(-omega/(2x)) thinning; efficient for lambda >= 1
inline double gig_gamma_reject(double lambda, double omega, RngHandle& rng) {
  for (;;) {
    double x = sample_gamma(lambda, rng) / (0.5 * omega);
    if (std::log(rng.uniform()) <= -0.5 * omega / x) return x;
  }
}

}  // namespace detail

// Generalized inverse-Gaussian: density proportional to
// x^{index-1} exp(-(chi/x + psi x)/2) on (0, inf).
inline double sample_gig(double index, double chi, double psi, RngHandle& rng) {
  if (chi < 0.0 || psi < 0.0 || (chi == 0.0 && psi == 0.0))
    throw std::invalid_argument("sample_gig: invalid (chi, psi)");
  if (chi == 0.0) {
    if (index <= 0.0) throw std::invalid_argument("sample_gig: chi=0 needs index > 0");
    return sample_gamma(index, rng) / (0.5 * psi);
  }
  if (psi == 0.0) {
    if (index >= 0.0) throw std::invalid_argument("sample_gig: psi=0 needs index < 0");
    return sample_invgamma(-index, 0.5 * chi, rng);
  }
  if (index < 0.0) return 1.0 / sample_gig(-index, psi, chi, rng);
  const double omega = std::sqrt(chi * psi);
  const double alpha = std::sqrt(chi / psi);
  double x;
  if (index > 2.0 || omega > 3.0)
    x = detail::gig_rou_shift(index, omega, rng);
  else if (omega >= 0.5)
    x = detail::gig_rou_noshift(index, omega, rng);
  else if (index >= 1.0)
    x = detail::gig_gamma_reject(index, omega, rng);
  else
    x = detail::gig_three_piece(index, omega, rng);
  return alpha * x;
}

// n x p draws from N(0, Lambda Lambda^T + sigma2 I), one row per sample,
// generated as eta Lambda^T + sigma z in O(n p k) without forming Sigma.
inline Matrix sample_factor_mvn(const Matrix& loadings, double sigma2,
                                Eigen::Index n, RngHandle& rng) {
  if (n < 1) throw std::invalid_argument("sample_factor_mvn: n < 1");
  const Eigen::Index p = loadings.rows(), k = loadings.cols();
  const double sigma = std::sqrt(sigma2);
  Matrix data(n, p);
  Vector eta(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index h = 0; h < k; ++h) eta(h) = sample_normal(rng);
    data.row(i) = (loadings * eta).transpose();
    for (Eigen::Index j = 0; j < p; ++j) data(i, j) += sigma * sample_normal(rng);
  }
  return data;
}

}  // namespace covfac
