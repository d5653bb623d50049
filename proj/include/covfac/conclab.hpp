#pragma once

// Monte Carlo and quadrature checks of the concentration bounds behind the
// factor-model posterior analysis: small-ball prior mass, effective-support
// and l1 tails of the shrinkage prior, quadratic-form deviation tails,
// global-scale tail probabilities, and two closed-form lower bounds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "covfac/dist.hpp"
#include "covfac/matlin.hpp"
#include "covfac/priors.hpp"
#include "covfac/rng.hpp"
#include "covfac/special.hpp"

namespace covfac {

// One CSV row of the concentration harness.
struct TailPoint {
  std::string lemma;
  int p = 0, s = 0;
  double epsilon_or_t = 0.0;
  double estimate = 0.0, ci_lo = 0.0, ci_hi = 0.0;
  double bound = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;
};

// Binomial frequency with a 95% Wilson interval.
struct McEstimate {
  long hits = 0, draws = 0;
  double estimate = 0.0, ci_lo = 0.0, ci_hi = 0.0;
  bool capped = false;  // draw cap reached before the target hit count
};

inline McEstimate wilson_interval(long hits, long draws, double z = 1.959964) {
  if (draws < 1 || hits < 0 || hits > draws)
    throw std::invalid_argument("wilson_interval: bad counts");
  McEstimate e;
  e.hits = hits;
  e.draws = draws;
  const double n = static_cast<double>(draws);
  const double ph = static_cast<double>(hits) / n;
  e.estimate = ph;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (ph + z2 / (2.0 * n)) / denom;
  const double half =
      z * std::sqrt(ph * (1.0 - ph) / n + z2 / (4.0 * n * n)) / denom;
  e.ci_lo = std::max(0.0, center - half);
  e.ci_hi = std::min(1.0, center + half);
  return e;
}

// A named prior over p-vectors, used by the small-ball and tail harnesses.
struct PriorSampler {
  std::string name;
  std::function<std::vector<double>(int p, RngHandle&)> draw;
};

inline PriorSampler shrinkage_sampler(double alpha = 0.5) {
  PriorSampler ps;
  ps.name = "shrinkage";
  ps.draw = [alpha](int p, RngHandle& rng) {
    return sample_ps(ShrinkagePriorSpec::with_defaults(p, alpha), rng).theta;
  };
  return ps;
}

inline PriorSampler normal_iid_sampler() {
  PriorSampler ps;
  ps.name = "normal-iid";
  ps.draw = [](int p, RngHandle& rng) {
    std::vector<double> th(p);
    for (auto& v : th) v = sample_normal(rng);
    return th;
  };
  return ps;
}

inline PriorSampler laplace_iid_sampler(double scale = 1.0) {
  PriorSampler ps;
  ps.name = "laplace-iid";
  ps.draw = [scale](int p, RngHandle& rng) {
    std::vector<double> th(p);
    for (auto& v : th) v = sample_de(scale, rng);
    return th;
  };
  return ps;
}

inline PriorSampler pointmass_sampler(double kappa = 1.0) {
  PriorSampler ps;
  ps.name = "point-mass";
  ps.draw = [kappa](int p, RngHandle& rng) {
    PointMassMixtureSpec spec;
    spec.m = p;
    spec.kappa = kappa;
    return sample_pl1(spec, rng).theta;
  };
  return ps;
}

// The small-ball hypothesis needs targets whose l1 mass grows like s log s;
// returns the ratio ||theta0||_1 / (4 s log(s + 2)) and rejects ratios > 1.
inline double validate_sparse_target(const std::vector<double>& theta0) {
  double l1 = 0.0;
  int s = 0;
  for (double v : theta0) {
    l1 += std::fabs(v);
    if (v != 0.0) ++s;
  }
  if (s == 0) return 0.0;
  double budget = 4.0 * s * std::log(static_cast<double>(s) + 2.0);
  if (l1 > budget)
    throw std::invalid_argument(
        "validate_sparse_target: ||theta0||_1 exceeds 4 s log(s + 2)");
  return l1 / budget;
}

struct SmallBallResult {
  McEstimate mc;
  double log_prob = 0.0, log_ci_lo = 0.0, log_ci_hi = 0.0;
  // true when the draw cap was reached with too few hits; log_prob is then
  // only an upper bound (from the Wilson upper limit)
  bool upper_bound_only = false;
};

// Direct MC estimate of P(||theta - theta0||_2 < epsilon) with pilot
// doubling: draws are doubled until >= 20 hits or the 1e8-draw cap.
inline SmallBallResult smallball_mc(const PriorSampler& prior,
                                    const std::vector<double>& theta0,
                                    double epsilon, long initial_replicates,
                                    RngHandle& rng, long cap = 100000000L) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("smallball_mc: epsilon <= 0");
  if (theta0.empty()) throw std::invalid_argument("smallball_mc: empty target");
  if (cap < 1000) throw std::invalid_argument("smallball_mc: cap < 1000");
  validate_sparse_target(theta0);
  const int p = static_cast<int>(theta0.size());
  long batch = std::max(initial_replicates, 1000L);
  long hits = 0, draws = 0;
  const double eps2 = epsilon * epsilon;
  while (true) {
    batch = std::min(batch, cap - draws);
    for (long r = 0; r < batch; ++r) {
      std::vector<double> th = prior.draw(p, rng);
      double d2 = 0.0;
      for (int j = 0; j < p; ++j) {
        double diff = th[j] - theta0[j];
        d2 += diff * diff;
        if (d2 >= eps2) break;
      }
      if (d2 < eps2) ++hits;
    }
    draws += batch;
    if (hits >= 20 || draws >= cap) break;
    batch = draws;  // double the total
  }
  SmallBallResult res;
  res.mc = wilson_interval(hits, draws);
  res.mc.capped = draws >= cap && hits < 20;
  res.upper_bound_only = res.mc.capped;
  res.log_prob = hits > 0 ? std::log(res.mc.estimate)
                          : -std::numeric_limits<double>::infinity();
  res.log_ci_lo = res.mc.ci_lo > 0.0
                      ? std::log(res.mc.ci_lo)
                      : -std::numeric_limits<double>::infinity();
  res.log_ci_hi = std::log(res.mc.ci_hi);
  return res;
}

// Analytic upper bound on the iid standard-normal small-ball log-probability:
// on {||theta - theta0||_2 < eps} the draw itself satisfies
// ||theta||_2 < ||theta0||_2 + eps, so log P <= log P(chi2_p < (||theta0|| + eps)^2).
// Needed because that probability sits far below direct-MC reach whenever the
// shrinkage prior's ball probability is measurable.
inline double normal_smallball_log_upper(int p, const std::vector<double>& theta0,
                                         double epsilon) {
  if (p < 1 || static_cast<int>(theta0.size()) != p || !(epsilon > 0.0))
    throw std::invalid_argument("normal_smallball_log_upper: bad inputs");
  double n2 = 0.0;
  for (double v : theta0) n2 += v * v;
  double r = std::sqrt(n2) + epsilon;
  return log_gamma_p(0.5 * p, 0.5 * r * r);
}

// P(|supp_delta(theta)| > A log p) with delta = epsilon / p, per grid point.
inline std::vector<TailPoint> suppdim_tail_mc(const PriorSampler& prior,
                                              const std::vector<int>& p_grid,
                                              double big_a, double epsilon,
                                              int replicates, RngHandle& rng) {
  if (replicates < 100)
    throw std::invalid_argument("suppdim_tail_mc: need replicates >= 100");
  if (!(epsilon > 0.0)) throw std::invalid_argument("suppdim_tail_mc: epsilon <= 0");
  if (big_a < 0.0) throw std::invalid_argument("suppdim_tail_mc: A < 0");
  std::vector<TailPoint> out;
  std::uint64_t cell = 0;
  for (int p : p_grid) {
    if (p < 2) throw std::invalid_argument("suppdim_tail_mc: p < 2");
    RngHandle stream = rng.split(cell);
    const double delta = epsilon / p;
    const double thresh = big_a * std::log(static_cast<double>(p));
    long hits = 0;
    for (int r = 0; r < replicates; ++r) {
      auto th = prior.draw(p, stream);
      if (static_cast<double>(supp_delta(th, delta).size()) > thresh) ++hits;
    }
    auto mc = wilson_interval(hits, replicates);
    TailPoint pt;
    pt.lemma = "suppdim:" + prior.name;
    pt.p = p;
    pt.s = static_cast<int>(std::ceil(thresh));
    pt.epsilon_or_t = epsilon;
    pt.estimate = mc.estimate;
    pt.ci_lo = mc.ci_lo;
    pt.ci_hi = mc.ci_hi;
    pt.seed = cell;
    out.push_back(std::move(pt));
    ++cell;
  }
  return out;
}

// P(||theta||_1 >= threshold(p)) with the default threshold (log p)^2.
inline std::vector<TailPoint> l1_tail_mc(
    const PriorSampler& prior, const std::vector<int>& p_grid, int replicates,
    RngHandle& rng,
    const std::function<double(int)>& threshold = [](int p) {
      double lg = std::log(static_cast<double>(p));
      return lg * lg;
    }) {
  if (replicates < 100)
    throw std::invalid_argument("l1_tail_mc: need replicates >= 100");
  std::vector<TailPoint> out;
  std::uint64_t cell = 0;
  for (int p : p_grid) {
    if (p < 2) throw std::invalid_argument("l1_tail_mc: p < 2");
    RngHandle stream = rng.split(cell);
    const double t = threshold(p);
    long hits = 0;
    for (int r = 0; r < replicates; ++r) {
      auto th = prior.draw(p, stream);
      double l1 = 0.0;
      for (double v : th) l1 += std::fabs(v);
      if (l1 >= t) ++hits;
    }
    auto mc = wilson_interval(hits, replicates);
    TailPoint pt;
    pt.lemma = "l1tail:" + prior.name;
    pt.p = p;
    pt.s = 0;
    pt.epsilon_or_t = t;
    pt.estimate = mc.estimate;
    pt.ci_lo = mc.ci_lo;
    pt.ci_hi = mc.ci_hi;
    pt.seed = cell;
    out.push_back(std::move(pt));
    ++cell;
  }
  return out;
}

// Deviation tail of the averaged Gaussian quadratic form x'Ax around tr A.
// The bound column is 2 exp(-C_fit r(t)) with r(t) = min(n t^2 / ||A||_F^2,
// n t / ||A||_2) and C_fit the largest constant consistent with every
// nonzero cell, so the fitted-bound shape can be checked downstream.
inline std::vector<TailPoint> quadform_tail_mc(const SymMatrix& a, int n,
                                               const std::vector<double>& t_grid,
                                               int replicates, RngHandle& rng) {
  if (n < 1 || replicates < 100)
    throw std::invalid_argument("quadform_tail_mc: bad n or replicates");
  Eigen::SelfAdjointEigenSolver<Matrix> es(a.mat(), Eigen::EigenvaluesOnly);
  Vector d = es.eigenvalues();
  const double trace = d.sum();
  const double fnorm = d.norm();
  const double opnorm = d.cwiseAbs().maxCoeff();
  const int p = static_cast<int>(d.size());

  std::vector<double> devs(replicates);
  for (auto& dev : devs) {
    double qsum = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) {
        double z = sample_normal(rng);
        qsum += d[j] * z * z;
      }
    dev = std::fabs(qsum / n - trace);
  }

  auto rate = [&](double t) {
    if (fnorm == 0.0) return std::numeric_limits<double>::infinity();
    return std::min(n * t * t / (fnorm * fnorm), n * t / opnorm);
  };
  std::vector<TailPoint> out;
  double c_fit = std::numeric_limits<double>::infinity();
  for (double t : t_grid) {
    if (!(t > 0.0)) throw std::invalid_argument("quadform_tail_mc: t <= 0");
    long hits = 0;
    for (double dev : devs)
      if (dev >= t) ++hits;
    auto mc = wilson_interval(hits, replicates);
    TailPoint pt;
    pt.lemma = "quadform";
    pt.p = p;
    pt.s = n;
    pt.epsilon_or_t = t;
    pt.estimate = mc.estimate;
    pt.ci_lo = mc.ci_lo;
    pt.ci_hi = mc.ci_hi;
    pt.seed = rng.seed();
    if (hits > 0 && std::isfinite(rate(t)) && rate(t) > 0.0)
      c_fit = std::min(c_fit, -std::log(mc.estimate / 2.0) / rate(t));
    out.push_back(std::move(pt));
  }
  for (auto& pt : out) {
    double r = rate(pt.epsilon_or_t);
    pt.bound = std::isfinite(c_fit) ? 2.0 * std::exp(-c_fit * r)
                                    : (std::isinf(r) ? 0.0 : 2.0);
  }
  return out;
}

// Tail probabilities of the global scale tau ~ IG(log p, log p), evaluated
// through the regularized incomplete gamma function (tau = b / Gamma(a, 1)).
struct FtauTails {
  int p = 0;
  double upper = 0.0;  // P(tau > log p)
  double mid = 0.0;    // P(2 log p <= tau <= 4 log p)
  double lower = 0.0;  // P(tau < 1 / log p)
};

inline std::vector<FtauTails> ftau_tail_quadrature(const std::vector<int>& p_grid) {
  std::vector<FtauTails> out;
  for (int p : p_grid) {
    if (p < 3) throw std::invalid_argument("ftau_tail_quadrature: p < 3");
    const double lg = std::log(static_cast<double>(p));
    FtauTails t;
    t.p = p;
    // tau > x  <=>  gamma-variate < b / x
    t.upper = gamma_p(lg, 1.0);
    t.mid = gamma_p(lg, 0.5) - gamma_p(lg, 0.25);
    t.lower = gamma_q(lg, lg * lg);
    out.push_back(t);
  }
  return out;
}

// Closed-form lower bound for the small ball of independent double
// exponentials eta_j ~ DE(psi_j) with psi_j in [a, b]:
// exp{-s log 2 - sum |eta0_j| / a} (1 - exp(-delta / (b sqrt(s))))^s.
inline double de_smallball_bound(double a, double b, double delta,
                                 const std::vector<double>& eta0) {
  if (!(0.0 < a && a <= b) || !(delta > 0.0) || eta0.empty())
    throw std::invalid_argument("de_smallball_bound: bad inputs");
  const double s = static_cast<double>(eta0.size());
  double l1 = 0.0;
  for (double v : eta0) l1 += std::fabs(v);
  double log_bound = -s * std::log(2.0) - l1 / a +
                     s * std::log1p(-std::exp(-delta / (b * std::sqrt(s))));
  return std::exp(log_bound);
}

struct BoundCheck {
  McEstimate mc;
  double bound = 0.0;
};

inline BoundCheck de_smallball_bound_check(const std::vector<double>& psi,
                                           double a, double b, double delta,
                                           const std::vector<double>& eta0,
                                           int replicates, RngHandle& rng) {
  if (psi.size() != eta0.size() || psi.empty())
    throw std::invalid_argument("de_smallball_bound_check: size mismatch");
  for (double ps : psi)
    if (!(a <= ps && ps <= b))
      throw std::invalid_argument("de_smallball_bound_check: psi outside [a, b]");
  if (replicates < 100)
    throw std::invalid_argument("de_smallball_bound_check: replicates < 100");
  BoundCheck res;
  res.bound = de_smallball_bound(a, b, delta, eta0);
  const double d2 = delta * delta;
  long hits = 0;
  for (int r = 0; r < replicates; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < psi.size(); ++j) {
      double diff = sample_de(psi[j], rng) - eta0[j];
      acc += diff * diff;
    }
    if (acc < d2) ++hits;
  }
  res.mc = wilson_interval(hits, replicates);
  return res;
}

// Frobenius small ball of Sigma = lambda lambda' + sigma0^2 I around
// Sigma0 = lambda0 lambda0' + sigma0^2 I under iid standard normal loadings
// (single factor), against the closed-form lower bound
// exp{-kappa2^2 - p + p log(epsilon / (2 kappa2))} with kappa2 > 1 an upper
// bound on ||lambda0||_2. The -p term comes from the coordinatewise ball
// bound P(||lambda||_2 < x) >= exp{-p + p log x}; a +p variant is not a
// lower bound (MC falsifies it already at p = 2, ||lambda0|| = 1).
struct FrobConcCheck {
  McEstimate mc;
  double bound = 0.0;
  double kappa2 = 0.0;
};

inline FrobConcCheck frob_prior_conc_check(const std::vector<double>& lambda0,
                                           double epsilon, int replicates,
                                           RngHandle& rng) {
  const int p = static_cast<int>(lambda0.size());
  if (p < 1 || p > 12)
    throw std::invalid_argument("frob_prior_conc_check: need 1 <= p <= 12");
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw std::invalid_argument("frob_prior_conc_check: epsilon outside (0, 1)");
  if (replicates < 100)
    throw std::invalid_argument("frob_prior_conc_check: replicates < 100");
  FrobConcCheck res;
  double n0sq = 0.0, l0norm;
  for (double v : lambda0) n0sq += v * v;
  l0norm = std::sqrt(n0sq);
  res.kappa2 = std::max(l0norm, 1.0 + 1e-9);
  res.bound = std::exp(-res.kappa2 * res.kappa2 - p +
                       p * std::log(epsilon / (2.0 * res.kappa2)));
  // ||ll' - l0 l0'||_F^2 = (l'l)^2 - 2 (l'l0)^2 + (l0'l0)^2
  long hits = 0;
  const double e2 = epsilon * epsilon;
  for (int r = 0; r < replicates; ++r) {
    double nsq = 0.0, dot = 0.0;
    for (int j = 0; j < p; ++j) {
      double z = sample_normal(rng);
      nsq += z * z;
      dot += z * lambda0[j];
    }
    double f2 = nsq * nsq - 2.0 * dot * dot + n0sq * n0sq;
    if (f2 < e2) ++hits;
  }
  res.mc = wilson_interval(hits, replicates);
  return res;
}

// g(x) = (1/x) log(1 / (x Gamma(x))) = -log Gamma(x + 1) / x on (0, 1/2);
// decreases from the Euler-Mascheroni constant at 0+.
inline double euler_g(double x) {
  if (!(x > 0.0 && x <= 0.5)) throw std::invalid_argument("euler_g: x outside (0, 1/2]");
  return -std::lgamma(x + 1.0) / x;
}

// Least-squares slope of y over x (for log-tail decay summaries).
inline double least_squares_slope(const std::vector<double>& x,
                                  const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("least_squares_slope: bad inputs");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / sxx;
}

}  // namespace covfac
