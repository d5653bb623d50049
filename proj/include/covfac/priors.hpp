#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "covfac/dist.hpp"
#include "covfac/rng.hpp"
#include "covfac/special.hpp"

namespace covfac {

// Global-local shrinkage prior: theta_j ~ DE(tau gamma_j),
// tau ~ IG(a_tau, b_tau), gamma ~ Dir(alpha/m, ..., alpha/m).
struct ShrinkagePriorSpec {
  int m = 1;
  double alpha = 0.5;
  double a_tau = 1.0;
  double b_tau = 1.0;

  static ShrinkagePriorSpec with_defaults(int m, double alpha = 0.5) {
    ShrinkagePriorSpec s;
    s.m = m;
    s.alpha = alpha;
    double lg = std::log(static_cast<double>(m));
    s.a_tau = lg > 0.5 ? lg : 0.5;
    s.b_tau = s.a_tau;
    return s;
  }
  void validate() const {
    if (m < 1 || alpha <= 0.0 || a_tau <= 0.0 || b_tau <= 0.0)
      throw std::invalid_argument("ShrinkagePriorSpec: invalid");
  }
};

enum class SlabKind { Laplace, StudentT };

// Point-mass mixture: theta_j ~ (1-pi) delta_0 + pi g, pi ~ Beta(1, kappa m + 1).
struct PointMassMixtureSpec {
  int m = 1;
  double kappa = 1.0;
  SlabKind slab = SlabKind::Laplace;
  double slab_scale = 1.0;

  void validate() const {
    if (m < 1 || kappa <= 0.0 || slab_scale <= 0.0)
      throw std::invalid_argument("PointMassMixtureSpec: invalid");
  }
};

struct ShrinkageDraw {
  std::vector<double> theta;
  double tau = 1.0;
  std::vector<double> gamma;
};

struct PointMassDraw {
  std::vector<double> theta;
  double pi = 0.0;
  std::vector<bool> inclusion;
};

inline ShrinkageDraw sample_ps(const ShrinkagePriorSpec& spec, RngHandle& rng) {
  spec.validate();
  ShrinkageDraw d;
  d.tau = sample_invgamma(spec.a_tau, spec.b_tau, rng);
  std::vector<double> alphas(spec.m, spec.alpha / spec.m);
  d.gamma = sample_dirichlet(alphas, rng);
  d.theta.resize(spec.m);
  for (int j = 0; j < spec.m; ++j) {
    double psi = d.tau * d.gamma[j];
    d.theta[j] = psi > 0.0 ? sample_de(psi, rng) : 0.0;
  }
  return d;
}

inline double sample_slab(const PointMassMixtureSpec& spec, RngHandle& rng) {
  if (spec.slab == SlabKind::Laplace) return sample_de(spec.slab_scale, rng);
  // t_3-like heavy tail: normal over sqrt of gamma-mixture
  double g = sample_gamma(1.5, rng) / 1.5;
  return spec.slab_scale * sample_normal(rng) / std::sqrt(g);
}

inline PointMassDraw sample_pl1(const PointMassMixtureSpec& spec, RngHandle& rng) {
  spec.validate();
  PointMassDraw d;
  d.pi = sample_beta(1.0, spec.kappa * spec.m + 1.0, rng);
  d.theta.assign(spec.m, 0.0);
  d.inclusion.assign(spec.m, false);
  for (int j = 0; j < spec.m; ++j) {
    if (rng.uniform() < d.pi) {
      d.inclusion[j] = true;
      d.theta[j] = sample_slab(spec, rng);
    }
  }
  return d;
}

// indices with |theta_j| > delta (strict)
inline std::vector<int> supp_delta(const std::vector<double>& theta, double delta) {
  if (delta < 0.0) throw std::invalid_argument("supp_delta: delta < 0");
  std::vector<int> idx;
  for (std::size_t j = 0; j < theta.size(); ++j)
    if (std::fabs(theta[j]) > delta) idx.push_back(static_cast<int>(j));
  return idx;
}

// joint log density log f(theta | tau, gamma) + log f_tau + log f_gamma
inline double log_density_ps(const std::vector<double>& theta, double tau,
                             const std::vector<double>& gamma,
                             const ShrinkagePriorSpec& spec) {
  spec.validate();
  if (theta.size() != gamma.size() ||
      static_cast<int>(theta.size()) != spec.m)
    throw std::invalid_argument("log_density_ps: size mismatch");
  if (tau <= 0.0) throw std::invalid_argument("log_density_ps: tau <= 0");
  const double aj = spec.alpha / spec.m;
  double ld = invgamma_logpdf(tau, spec.a_tau, spec.b_tau);
  ld += std::lgamma(spec.alpha) - spec.m * std::lgamma(aj);
  for (int j = 0; j < spec.m; ++j) {
    if (gamma[j] <= 0.0) return -std::numeric_limits<double>::infinity();
    ld += (aj - 1.0) * std::log(gamma[j]);
    double psi = tau * gamma[j];
    ld += laplace_logpdf(theta[j], psi);
  }
  return ld;
}

}  // namespace covfac
