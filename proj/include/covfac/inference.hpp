#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "covfac/dist.hpp"
#include "covfac/matlin.hpp"
#include "covfac/model.hpp"
#include "covfac/priors.hpp"
#include "covfac/rng.hpp"
#include "covfac/special.hpp"

namespace covfac {

enum class PriorRegime { Shrinkage, PointMass, NormalIid };

struct SamplerConfig {
  PriorRegime regime = PriorRegime::Shrinkage;
  int k = 1;
  int iterations = 2000;
  int burnin = 500;
  int thin = 1;
  // shrinkage hyperparameters; a_tau/b_tau <= 0 selects max(log(pk), 1/2)
  double alpha = 0.5;
  double a_tau = 0.0;
  double b_tau = 0.0;
  // point-mass mixture
  double kappa = 1.0;
  // sigma^2: gamma(a, b) prior for the shrinkage/point-mass regimes,
  // inverse-gamma(a, b) truncated to [0, m_sigma] for the normal-iid regime
  double a_sigma = 1.0;
  double b_sigma = 1.0;
  double m_sigma = 10.0;
  double sigma2_step = 0.5;  // initial random-walk step on log sigma^2
  // Start from a data-driven spectral estimate instead of a prior draw.
  // The chain targets the same posterior either way; the warm start picks an
  // over-inclusive support, which the sweeps can prune but cannot always
  // rebuild at scale (the simplex corner pins coordinates to exact zeros, and
  // a prior-scale dense start traps the normal regime in a collapsed-factors
  // mode when p >> n).
  bool warm_start = false;
  bool store_loadings = false;
  bool freeze_tau = false;  // diagnostic: skips the tau update on purpose
  std::uint64_t seed = 1;
  std::uint64_t stream = 0;

  void validate() const {
    if (k < 1 || iterations <= burnin || burnin < 0 || thin < 1)
      throw std::invalid_argument("SamplerConfig: need iterations > burnin >= 0, thin >= 1");
    if ((iterations - burnin) % thin != 0)
      throw std::invalid_argument("SamplerConfig: thin must divide iterations - burnin");
    if (alpha <= 0.0 || kappa <= 0.0 || a_sigma <= 0.0 || b_sigma <= 0.0 ||
        m_sigma <= 0.0 || sigma2_step <= 0.0)
      throw std::invalid_argument("SamplerConfig: nonpositive hyperparameter");
  }
  ShrinkagePriorSpec shrinkage_spec(int p) const {
    if (a_tau > 0.0 && b_tau > 0.0) {
      ShrinkagePriorSpec s;
      s.m = p * k;
      s.alpha = alpha;
      s.a_tau = a_tau;
      s.b_tau = b_tau;
      return s;
    }
    return ShrinkagePriorSpec::with_defaults(p * k, alpha);
  }
  PointMassMixtureSpec pointmass_spec(int p) const {
    PointMassMixtureSpec s;
    s.m = p * k;
    s.kappa = kappa;
    return s;
  }
};

struct GibbsState {
  Matrix loadings;  // p x k
  Matrix factors;   // n x k
  double sigma2 = 1.0;
  // shrinkage latents
  Matrix v;  // p x k local normal-mixture scales (also the slab scales)
  double tau = 1.0;
  Matrix gamma;  // p x k, entries sum to 1
  // point-mass latents
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> inclusion;
  double pi = 0.5;
  // adaptive MH bookkeeping
  double log_sigma2_step = std::log(0.5);
  long sigma2_proposals = 0, sigma2_accepts = 0, sigma2_adapt_iter = 0;
  long gamma_proposals = 0, gamma_accepts = 0;
  long lambda_clamps = 0;  // coordinates carried as exact zeros in a scale update

  Eigen::Index p() const { return loadings.rows(); }
  Eigen::Index k() const { return loadings.cols(); }
};

namespace detail {

// Coordinates whose scale chain underflows double precision are carried as
// exact zeros: v = 0 marks them and the loading update pins lambda to 0, so
// |lambda_j| / gamma_j stays O(tau) instead of exploding when gamma_j is
// below the representable range of the Dirichlet corner.
constexpr double kScaleZero = 1e-100;

// v | lambda, psi is giG(1/2, lambda^2, 1/psi^2); the chi = 0 branch is the
// exact gamma limit, so no floor on |lambda| is needed.
inline double draw_local_scale(double lambda, double psi, long& clamps, RngHandle& rng) {
  if (!(psi >= kScaleZero)) {
    ++clamps;
    return 0.0;
  }
  psi = std::min(psi, 1e140);
  double a = std::min(std::fabs(lambda), 1e140);
  double v = sample_gig(0.5, a * a, 1.0 / (psi * psi), rng);
  return v >= kScaleZero * kScaleZero ? v : 0.0;
}

// factors | loadings, sigma2, data: rows iid N(prec^{-1} L^T y_i / s2, prec^{-1})
inline void update_factors(GibbsState& st, const Matrix& data, RngHandle& rng) {
  const Eigen::Index n = data.rows(), k = st.k();
  Matrix prec = st.loadings.transpose() * st.loadings / st.sigma2;
  prec.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> llt(prec);
  Matrix mean_t = llt.solve(st.loadings.transpose() * data.transpose() / st.sigma2);
  Matrix z(k, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index h = 0; h < k; ++h) z(h, i) = sample_normal(rng);
  llt.matrixL().transpose().solveInPlace(z);
  st.factors = (mean_t + z).transpose();
}

// loadings row j | rest: N_k with precision diag(1/v_j) + H^T H / s2.
// Coordinates whose prior precision exceeds kPrecPin (v underflown to the
// zero marker) are pinned to an exact zero and the reduced system is solved
// over the remaining coordinates.
constexpr double kPrecPin = 1e200;

inline void update_loading_rows(GibbsState& st, const Matrix& data,
                                const Matrix& row_prior_prec_diag, RngHandle& rng) {
  const Eigen::Index p = st.p(), k = st.k();
  Matrix gram = st.factors.transpose() * st.factors / st.sigma2;
  Matrix hty = st.factors.transpose() * data / st.sigma2;  // k x p
  std::vector<Eigen::Index> act;
  act.reserve(k);
  for (Eigen::Index j = 0; j < p; ++j) {
    act.clear();
    for (Eigen::Index h = 0; h < k; ++h) {
      double prec = row_prior_prec_diag(j, h);
      if (std::isfinite(prec) && prec < kPrecPin) act.push_back(h);
    }
    if (act.size() == static_cast<std::size_t>(k)) {
      Matrix a = gram;
      a.diagonal() += row_prior_prec_diag.row(j).transpose();
      Eigen::LLT<Matrix> llt(a);
      Vector mean = llt.solve(hty.col(j));
      Vector z(k);
      for (Eigen::Index h = 0; h < k; ++h) z(h) = sample_normal(rng);
      llt.matrixL().transpose().solveInPlace(z);
      st.loadings.row(j) = (mean + z).transpose();
      continue;
    }
    st.loadings.row(j).setZero();
    if (act.empty()) continue;
    const Eigen::Index ka = static_cast<Eigen::Index>(act.size());
    Matrix a(ka, ka);
    Vector b(ka), z(ka);
    for (Eigen::Index u = 0; u < ka; ++u) {
      for (Eigen::Index w = 0; w < ka; ++w) a(u, w) = gram(act[u], act[w]);
      a(u, u) += row_prior_prec_diag(j, act[u]);
      b(u) = hty(act[u], j);
      z(u) = sample_normal(rng);
    }
    Eigen::LLT<Matrix> llt(a);
    Vector mean = llt.solve(b);
    llt.matrixL().transpose().solveInPlace(z);
    for (Eigen::Index u = 0; u < ka; ++u) st.loadings(j, act[u]) = mean(u) + z(u);
  }
}

inline double residual_sse(const GibbsState& st, const Matrix& data) {
  return (data - st.factors * st.loadings.transpose()).squaredNorm();
}

// random-walk MH on log sigma2 against the gamma(a, b) prior
inline void update_sigma2_mh(GibbsState& st, const Matrix& data,
                             const SamplerConfig& cfg, bool adapt, RngHandle& rng) {
  const double np = static_cast<double>(data.rows()) * data.cols();
  const double sse = data.rows() > 0 ? residual_sse(st, data) : 0.0;
  auto logpost = [&](double z) {
    return cfg.a_sigma * z - cfg.b_sigma * std::exp(z) - 0.5 * np * z -
           0.5 * sse * std::exp(-z);
  };
  double z0 = std::log(st.sigma2);
  double z1 = z0 + std::exp(st.log_sigma2_step) * sample_normal(rng);
  double logr = logpost(z1) - logpost(z0);
  bool acc = std::log(rng.uniform()) < logr;
  ++st.sigma2_proposals;
  if (acc) {
    ++st.sigma2_accepts;
    st.sigma2 = std::exp(z1);
  }
  if (adapt) {
    ++st.sigma2_adapt_iter;
    st.log_sigma2_step +=
        ((acc ? 1.0 : 0.0) - 0.3) / std::pow(static_cast<double>(st.sigma2_adapt_iter), 0.6);
  }
}

// tau | lambda, gamma with the local scales integrated out: the double
// exponential kernel prod (2 tau gamma_j)^{-1} exp(-|lambda_j|/(tau gamma_j))
// is conjugate to the inverse-gamma prior
inline void update_tau(GibbsState& st, const ShrinkagePriorSpec& sp, RngHandle& rng) {
  // |lambda| carries the same sub-representable floor as the gamma update, so
  // the two collapsed conditionals describe one coherent target
  double b = sp.b_tau;
  for (Eigen::Index j = 0; j < st.p(); ++j)
    for (Eigen::Index h = 0; h < st.k(); ++h) {
      double a = std::max(std::fabs(st.loadings(j, h)), 1e-300);
      double g = st.gamma(j, h);
      if (g > 0.0) b += a / g;
    }
  b = std::min(b, 1e300);
  st.tau = sample_invgamma(sp.a_tau + sp.m, b, rng);
}

// gamma | lambda with both the local scales and the global scale integrated
// out: the tau integral leaves target prod gamma_j^{alpha/m - 2} *
// (b_tau + C(gamma))^{-(a_tau + m)} with C(gamma) = sum |lambda_j|/gamma_j.
// In the unnormalized coordinates T_j = tau gamma_j the same joint factors
// into independent inverse-gamma(1 - alpha/m, |lambda_j|) kernels times a
// correction in the total mass alone, so normalizing independent
// inverse-gamma draws gives a proposal whose simplex marginal is the closed
// form prod gamma_j^{alpha/m - 2} C(gamma)^{-(m - alpha)}. The per-coordinate
// factors cancel, leaving the bounded importance weight
// w(C) = (b_tau + C)^{-(a_tau + m)} C^{m - alpha}, so an ensemble move
// (iterated sampling-importance-resampling: draw several candidates, then
// resample the next state among current + candidates proportionally to w)
// is uniformly ergodic and moves with high probability. A sub-representable
// floor on |lambda| keeps the collapsed target proper when loadings underflow
// to exact zeros; tau is redrawn from its exact conditional afterwards.
inline void update_gamma_mh(GibbsState& st, const ShrinkagePriorSpec& sp, RngHandle& rng) {
  const Eigen::Index p = st.p(), k = st.k();
  const int m = sp.m;
  const double aj = sp.alpha / m;
  if (!(aj < 1.0 && sp.alpha < m))
    throw std::invalid_argument("update_gamma_mh: needs alpha < m");
  constexpr int kCandidates = 16;
  Matrix cf(p, k);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index h = 0; h < k; ++h)
      cf(j, h) = std::max(std::fabs(st.loadings(j, h)), 1e-300);
  auto big_c = [&](const Matrix& g) {
    double total = 0.0;
    for (Eigen::Index j = 0; j < p; ++j)
      for (Eigen::Index h = 0; h < k; ++h) total += cf(j, h) / g(j, h);
    return total;  // infinity signals a state the proposal cannot reach
  };
  auto log_w = [&](double c) {
    if (!std::isfinite(c)) return -std::numeric_limits<double>::infinity();
    return (m - sp.alpha) * std::log(c) - (sp.a_tau + m) * std::log(sp.b_tau + c);
  };
  std::vector<Matrix> cand;
  cand.reserve(kCandidates);
  std::vector<double> lw(kCandidates + 1);
  lw[0] = log_w(big_c(st.gamma));
  for (int r = 0; r < kCandidates; ++r) {
    Matrix t(p, k);
    double s = 0.0;
    for (Eigen::Index j = 0; j < p; ++j)
      for (Eigen::Index h = 0; h < k; ++h) {
        t(j, h) = cf(j, h) / sample_gamma(1.0 - aj, rng);
        s += t(j, h);
      }
    cand.push_back(t / s);
    lw[r + 1] = log_w(big_c(cand.back()));
  }
  ++st.gamma_proposals;
  double lmax = *std::max_element(lw.begin(), lw.end());
  if (!std::isfinite(lmax)) return;  // no evaluable state: keep the current one
  double total = 0.0;
  for (double& v : lw) {
    v = std::exp(v - lmax);
    total += v;
  }
  double u = rng.uniform() * total;
  int pick = 0;
  double run = 0.0;
  for (int r = 0; r <= kCandidates; ++r) {
    run += lw[r];
    if (u < run) {
      pick = r;
      break;
    }
  }
  if (pick > 0) {
    ++st.gamma_accepts;
    st.gamma = cand[pick - 1];
  }
}

}  // namespace detail

// one systematic sweep under the global-local shrinkage prior: factors,
// loading rows (given local scales), then the partially collapsed block
// gamma (marginal of tau and the local scales), tau, the local scales,
// and sigma2
inline void gibbs_step_ps(GibbsState& st, const Matrix& data,
                          const SamplerConfig& cfg, RngHandle& rng,
                          bool adapt = false) {
  const Eigen::Index p = st.p(), k = st.k();
  auto sp = cfg.shrinkage_spec(static_cast<int>(p));
  if (data.rows() > 0) detail::update_factors(st, data, rng);
  Matrix prior_prec = st.v.cwiseInverse();
  detail::update_loading_rows(st, data, prior_prec, rng);
  detail::update_gamma_mh(st, sp, rng);
  if (!cfg.freeze_tau) detail::update_tau(st, sp, rng);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index h = 0; h < k; ++h)
      st.v(j, h) = detail::draw_local_scale(st.loadings(j, h),
                                            st.tau * st.gamma(j, h),
                                            st.lambda_clamps, rng);
  detail::update_sigma2_mh(st, data, cfg, adapt, rng);
}

// one sweep under the point-mass mixture prior; loadings update elementwise
// with the marginal inclusion odds, keeping exact zeros bitwise zero
inline void gibbs_step_pl1(GibbsState& st, const Matrix& data,
                           const SamplerConfig& cfg, RngHandle& rng,
                           bool adapt = false) {
  const Eigen::Index p = st.p(), k = st.k(), n = data.rows();
  if (n > 0) detail::update_factors(st, data, rng);
  const double log_pi_odds = std::log(st.pi) - std::log1p(-st.pi);
  Vector hnorm2(k);
  for (Eigen::Index h = 0; h < k; ++h) hnorm2(h) = st.factors.col(h).squaredNorm();
  Vector r(n);
  for (Eigen::Index j = 0; j < p; ++j) {
    r = data.col(j) - st.factors * st.loadings.row(j).transpose();
    for (Eigen::Index h = 0; h < k; ++h) {
      double old = st.loadings(j, h);
      if (old != 0.0) r += st.factors.col(h) * old;
      double vjh = st.v(j, h);
      double q = 1.0 / vjh + hnorm2(h) / st.sigma2;
      double mu = n > 0 ? st.factors.col(h).dot(r) / st.sigma2 / q : 0.0;
      double log_odds = log_pi_odds - 0.5 * std::log(vjh * q) + 0.5 * mu * mu * q;
      bool zin = std::log(rng.uniform()) < -std::log1p(std::exp(-log_odds));
      if (zin) {
        double lam = mu + sample_normal(rng) / std::sqrt(q);
        st.inclusion(j, h) = true;
        st.loadings(j, h) = lam;
        st.v(j, h) =
            std::max(detail::draw_local_scale(lam, 1.0, st.lambda_clamps, rng), 1e-300);
        r -= st.factors.col(h) * lam;
      } else {
        st.inclusion(j, h) = false;
        st.loadings(j, h) = 0.0;
        st.v(j, h) = sample_exponential(0.5, rng);  // slab scale refresh
      }
    }
  }
  const double m = static_cast<double>(p) * k;
  double nz = static_cast<double>(st.inclusion.count());
  st.pi = sample_beta(1.0 + nz, cfg.kappa * m + 1.0 + m - nz, rng);
  detail::update_sigma2_mh(st, data, cfg, adapt, rng);
}

// one sweep under iid N(0,1) loadings with truncated inverse-gamma sigma2
inline void gibbs_step_p0(GibbsState& st, const Matrix& data,
                          const SamplerConfig& cfg, RngHandle& rng,
                          bool /*adapt*/ = false) {
  const Eigen::Index n = data.rows();
  if (n > 0) detail::update_factors(st, data, rng);
  Matrix prior_prec = Matrix::Ones(st.p(), st.k());
  detail::update_loading_rows(st, data, prior_prec, rng);
  const double np = static_cast<double>(n) * st.p();
  const double sse = n > 0 ? detail::residual_sse(st, data) : 0.0;
  st.sigma2 = sample_invgamma_trunc(cfg.a_sigma + 0.5 * np,
                                    cfg.b_sigma + 0.5 * sse, 0.0, cfg.m_sigma, rng);
}

inline void gibbs_step(GibbsState& st, const Matrix& data, const SamplerConfig& cfg,
                       RngHandle& rng, bool adapt = false) {
  switch (cfg.regime) {
    case PriorRegime::Shrinkage: gibbs_step_ps(st, data, cfg, rng, adapt); break;
    case PriorRegime::PointMass: gibbs_step_pl1(st, data, cfg, rng, adapt); break;
    case PriorRegime::NormalIid: gibbs_step_p0(st, data, cfg, rng, adapt); break;
  }
}

// exact draw of the full state from the prior (and factors from theirs)
inline GibbsState init_from_prior(const SamplerConfig& cfg, int p, Eigen::Index n,
                                  RngHandle& rng) {
  cfg.validate();
  GibbsState st;
  const int k = cfg.k;
  st.loadings = Matrix::Zero(p, k);
  st.v = Matrix::Ones(p, k);
  st.log_sigma2_step = std::log(cfg.sigma2_step);
  switch (cfg.regime) {
    case PriorRegime::Shrinkage: {
      auto sp = cfg.shrinkage_spec(p);
      st.tau = sample_invgamma(sp.a_tau, sp.b_tau, rng);
      std::vector<double> alphas(sp.m, sp.alpha / sp.m);
      auto g = sample_dirichlet(alphas, rng);
      st.gamma = Matrix(p, k);
      for (int h = 0; h < k; ++h)
        for (int j = 0; j < p; ++j) st.gamma(j, h) = g[h * p + j];
      // lambda | v ~ N(0, v), v ~ Exp(rate 1/(2 psi^2)) gives lambda ~ DE(psi);
      // scales below the representable corner become exact-zero coordinates
      for (int j = 0; j < p; ++j)
        for (int h = 0; h < k; ++h) {
          double psi = st.tau * st.gamma(j, h);
          double vj = psi >= detail::kScaleZero
                          ? 2.0 * psi * psi * (-std::log(rng.uniform()))
                          : 0.0;
          if (vj < detail::kScaleZero * detail::kScaleZero) vj = 0.0;
          st.v(j, h) = vj;
          st.loadings(j, h) = vj > 0.0 ? std::sqrt(vj) * sample_normal(rng) : 0.0;
        }
      st.sigma2 = sample_gamma(cfg.a_sigma, rng) / cfg.b_sigma;
      break;
    }
    case PriorRegime::PointMass: {
      const double m = static_cast<double>(p) * k;
      st.pi = sample_beta(1.0, cfg.kappa * m + 1.0, rng);
      st.inclusion.setConstant(p, k, false);
      for (int j = 0; j < p; ++j)
        for (int h = 0; h < k; ++h) {
          double vj = std::max(sample_exponential(0.5, rng), 1e-300);
          st.v(j, h) = vj;
          if (rng.uniform() < st.pi) {
            st.inclusion(j, h) = true;
            st.loadings(j, h) = std::sqrt(vj) * sample_normal(rng);
          }
        }
      st.sigma2 = sample_gamma(cfg.a_sigma, rng) / cfg.b_sigma;
      break;
    }
    case PriorRegime::NormalIid: {
      for (int j = 0; j < p; ++j)
        for (int h = 0; h < k; ++h) st.loadings(j, h) = sample_normal(rng);
      st.sigma2 = sample_invgamma_trunc(cfg.a_sigma, cfg.b_sigma, 0.0, cfg.m_sigma, rng);
      break;
    }
  }
  st.factors = Matrix(n, k);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int h = 0; h < k; ++h) st.factors(i, h) = sample_normal(rng);
  return st;
}

// Data-driven start: truncated spectral estimate of the loadings from the
// n x n Gram matrix (never forms p x p), residual-based noise estimate, and
// regime latents set consistently with the estimated loadings.
inline GibbsState init_data_driven(const SamplerConfig& cfg, const Matrix& data,
                                   RngHandle& rng) {
  cfg.validate();
  const Eigen::Index p = data.cols(), n = data.rows();
  const int k = cfg.k;
  if (n < 1 || p < 1)
    throw std::invalid_argument("init_data_driven: empty data");
  GibbsState st;
  st.log_sigma2_step = std::log(cfg.sigma2_step);

  Matrix gramn = data * data.transpose() / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Matrix> es(gramn);
  const Eigen::Index top = std::min<Eigen::Index>(k, n);
  double explained = 0.0;
  for (Eigen::Index h = 0; h < top; ++h)
    explained += std::max(es.eigenvalues()(n - 1 - h), 0.0);
  double s2hat = (gramn.trace() - explained) / std::max<double>(p - top, 1.0);
  s2hat = std::min(std::max(s2hat, 1e-6),
                   cfg.regime == PriorRegime::NormalIid
                       ? cfg.m_sigma
                       : std::numeric_limits<double>::infinity());
  st.sigma2 = s2hat;

  st.loadings = Matrix::Zero(p, k);
  for (Eigen::Index h = 0; h < top; ++h) {
    double d = es.eigenvalues()(n - 1 - h);
    if (!(d > 0.0)) continue;
    // unit eigenvector of the p x p sample covariance via the Gram pair
    Vector w = data.transpose() * es.eigenvectors().col(n - 1 - h) /
               std::sqrt(static_cast<double>(n) * d);
    st.loadings.col(h) = w * std::sqrt(std::max(d - s2hat, 1e-4));
  }

  st.v = Matrix::Ones(p, k);
  switch (cfg.regime) {
    case PriorRegime::Shrinkage: {
      st.tau = std::max(st.loadings.cwiseAbs().sum(), 1e-3);
      // keep every coordinate alive: gamma proportional to |lambda| with a
      // relative floor well above the exact-zero corner
      double floor = 1e-8 * std::max(st.loadings.cwiseAbs().maxCoeff(), 1e-3);
      Matrix g = st.loadings.cwiseAbs().cwiseMax(floor);
      st.gamma = g / g.sum();
      for (Eigen::Index j = 0; j < p; ++j)
        for (int h = 0; h < k; ++h)
          st.v(j, h) = detail::draw_local_scale(
              st.loadings(j, h), st.tau * st.gamma(j, h), st.lambda_clamps, rng);
      break;
    }
    case PriorRegime::PointMass: {
      st.inclusion.setConstant(p, k, true);
      st.pi = 0.5;
      for (Eigen::Index j = 0; j < p; ++j)
        for (int h = 0; h < k; ++h)
          st.v(j, h) = std::max(
              detail::draw_local_scale(st.loadings(j, h), 1.0, st.lambda_clamps, rng),
              1e-300);
      break;
    }
    case PriorRegime::NormalIid:
      break;
  }
  st.factors = Matrix::Zero(n, k);
  detail::update_factors(st, data, rng);
  return st;
}

struct PosteriorChain {
  int iterations = 0, burnin = 0, thin = 1;
  std::uint64_t seed = 0, stream = 0;
  std::vector<double> op_loss, frob_loss;  // present when truth supplied
  std::vector<double> sigma2_draws;
  std::vector<double> tau_draws;      // shrinkage regime
  std::vector<double> pi_draws;       // point-mass regime
  std::vector<double> loadings_fro2;  // ||Lambda||_F^2 per stored draw
  std::vector<Matrix> loadings_draws;  // only when requested
  double gamma_accept_rate = 0.0, sigma2_accept_rate = 0.0;
  long lambda_clamps = 0;

  int stored() const { return static_cast<int>(sigma2_draws.size()); }
};

// squared Frobenius distance between two low-rank-plus-scalar matrices via
// k x k Gram traces; never forms p x p
inline double lowrank_frob_diff(const LowRankPlusScalar& m1, const LowRankPlusScalar& m2) {
  if (m1.dim() != m2.dim())
    throw std::invalid_argument("lowrank_frob_diff: dimension mismatch");
  const double p = static_cast<double>(m1.dim());
  Matrix g11 = m1.loadings.transpose() * m1.loadings;
  Matrix g22 = m2.loadings.transpose() * m2.loadings;
  Matrix g12 = m1.loadings.transpose() * m2.loadings;
  double quad = g11.squaredNorm() - 2.0 * g12.squaredNorm() + g22.squaredNorm();
  double tr = g11.trace() - g22.trace();
  double ds = m1.scalar - m2.scalar;
  return std::sqrt(std::max(quad + 2.0 * ds * tr + ds * ds * p, 0.0));
}

inline PosteriorChain run_chain(const SamplerConfig& cfg, const Matrix& data,
                                const FactorModelParams* truth = nullptr) {
  cfg.validate();
  const int p = static_cast<int>(data.cols());
  RngHandle rng(cfg.seed, cfg.stream);
  GibbsState st;
  if (cfg.warm_start && data.rows() > 0) {
    st = init_data_driven(cfg, data, rng);
  } else {
    st = init_from_prior(cfg, p, data.rows(), rng);
    if (data.rows() > 0) {
      double avg_var = data.array().square().mean();
      st.sigma2 = std::min(std::max(avg_var, 1e-6),
                           cfg.regime == PriorRegime::NormalIid ? cfg.m_sigma : avg_var);
      detail::update_factors(st, data, rng);
    }
  }
  PosteriorChain chain;
  chain.iterations = cfg.iterations;
  chain.burnin = cfg.burnin;
  chain.thin = cfg.thin;
  chain.seed = cfg.seed;
  chain.stream = cfg.stream;
  std::optional<LowRankPlusScalar> truth_cov;
  if (truth) truth_cov.emplace(truth->loadings, truth->sigma2);
  for (int t = 1; t <= cfg.iterations; ++t) {
    gibbs_step(st, data, cfg, rng, t <= cfg.burnin);
    if (t > cfg.burnin && (t - cfg.burnin) % cfg.thin == 0) {
      chain.sigma2_draws.push_back(st.sigma2);
      chain.loadings_fro2.push_back(st.loadings.squaredNorm());
      if (cfg.regime == PriorRegime::Shrinkage) chain.tau_draws.push_back(st.tau);
      if (cfg.regime == PriorRegime::PointMass) chain.pi_draws.push_back(st.pi);
      if (truth_cov) {
        LowRankPlusScalar draw(st.loadings, st.sigma2);
        chain.op_loss.push_back(lowrank_opnorm_diff(draw, *truth_cov));
        chain.frob_loss.push_back(lowrank_frob_diff(draw, *truth_cov));
      }
      if (cfg.store_loadings) chain.loadings_draws.push_back(st.loadings);
    }
  }
  chain.gamma_accept_rate =
      st.gamma_proposals > 0
          ? static_cast<double>(st.gamma_accepts) / st.gamma_proposals
          : 0.0;
  chain.sigma2_accept_rate =
      st.sigma2_proposals > 0
          ? static_cast<double>(st.sigma2_accepts) / st.sigma2_proposals
          : 0.0;
  chain.lambda_clamps = st.lambda_clamps;
  return chain;
}

struct LossSummary {
  double op_mean = 0, op_median = 0, op_q05 = 0, op_q95 = 0;
  double frob_mean = 0, frob_median = 0, frob_q05 = 0, frob_q95 = 0;
  // exceedance fraction of the operator-norm loss per configured radius
  std::vector<std::pair<double, double>> op_exceedance;
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& s, double q) {
  double pos = q * (s.size() - 1);
  std::size_t lo = static_cast<std::size_t>(pos);
  std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - lo) * (s[hi] - s[lo]);
}

}  // namespace detail

inline LossSummary posterior_loss_summary(const PosteriorChain& chain,
                                          const std::vector<double>& radii = {}) {
  if (chain.op_loss.empty())
    throw std::invalid_argument("posterior_loss_summary: chain carries no losses");
  LossSummary s;
  auto fill = [](const std::vector<double>& v, double& mean, double& med,
                 double& q05, double& q95) {
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    double tot = 0.0;
    for (double x : v) tot += x;
    mean = tot / v.size();
    med = detail::quantile_sorted(sorted, 0.5);
    q05 = detail::quantile_sorted(sorted, 0.05);
    q95 = detail::quantile_sorted(sorted, 0.95);
  };
  fill(chain.op_loss, s.op_mean, s.op_median, s.op_q05, s.op_q95);
  fill(chain.frob_loss, s.frob_mean, s.frob_median, s.frob_q05, s.frob_q95);
  for (double r : radii) {
    double count = 0.0;
    for (double x : chain.op_loss)
      if (x > r) count += 1.0;
    s.op_exceedance.emplace_back(r, count / chain.op_loss.size());
  }
  return s;
}

// --- sampler validation -----------------------------------------------------

namespace detail {

struct GewekeStats {
  static constexpr int kCount = 8;
  static std::array<const char*, kCount> names() {
    return {"load_fro2", "load_l1",   "sigma2",    "sigma2_sq",
            "fac_fro2",  "data_mom2", "data_mom2_first", "regime_scalar"};
  }
  static std::array<double, kCount> eval(const GibbsState& st, const Matrix& data,
                                         PriorRegime regime) {
    const double np = static_cast<double>(data.rows()) * data.cols();
    double mom2 = np > 0 ? data.squaredNorm() / np : 0.0;
    double first = data.rows() > 0
                       ? data.col(0).squaredNorm() / data.rows()
                       : 0.0;
    double extra = 0.0;
    switch (regime) {
      case PriorRegime::Shrinkage: extra = std::log(st.tau); break;
      case PriorRegime::PointMass: extra = st.pi; break;
      case PriorRegime::NormalIid: extra = st.loadings(0, 0) * st.loadings(0, 0); break;
    }
    // log1p keeps every statistic's prior variance finite (the inverse-gamma
    // global scale gives raw loading/data moments heavy tails)
    return {std::log1p(st.loadings.squaredNorm()),
            std::log1p(st.loadings.cwiseAbs().sum()),
            st.sigma2,
            st.sigma2 * st.sigma2,
            st.factors.squaredNorm(),
            std::log1p(mom2),
            std::log1p(first),
            extra};
  }
};

struct MeanSe {
  double mean = 0, se = 0;
};

inline MeanSe mean_se_iid(const std::vector<double>& x) {
  double m = 0;
  for (double v : x) m += v;
  m /= x.size();
  double s2 = 0;
  for (double v : x) s2 += (v - m) * (v - m);
  s2 /= (x.size() - 1);
  return {m, std::sqrt(s2 / x.size())};
}

// batch-means standard error for a correlated chain
inline MeanSe mean_se_batch(const std::vector<double>& x, int batches = 50) {
  if (x.size() < static_cast<std::size_t>(2 * batches)) return mean_se_iid(x);
  const std::size_t b = x.size() / batches;
  std::vector<double> bm(batches);
  for (int i = 0; i < batches; ++i) {
    double s = 0;
    for (std::size_t t = i * b; t < (i + 1) * b; ++t) s += x[t];
    bm[i] = s / b;
  }
  auto ms = mean_se_iid(bm);
  return {ms.mean, ms.se};
}

// Slowly mixing chains (the global shrinkage scale can take long excursions)
// need coarse batches to see the low-frequency variance, while short chains
// need enough batches for a stable estimate; taking the largest SE across
// batch counts guards against underestimating either way.
inline MeanSe mean_se_batch_robust(const std::vector<double>& x) {
  MeanSe best = mean_se_batch(x, 50);
  for (int batches : {25, 10}) {
    MeanSe ms = mean_se_batch(x, batches);
    if (ms.se > best.se) best.se = ms.se;
  }
  return best;
}

}  // namespace detail

// Joint distribution test: compare prior-predictive draws (independent) with
// a successive-conditional simulator that alternates data | state and one
// Gibbs sweep. A correct sweep leaves the joint invariant, so all z-scores
// stay small; a broken update drives some |z| large.
inline std::vector<double> geweke_joint_test(const SamplerConfig& cfg, int p, int n,
                                             int num_samples, RngHandle& rng) {
  cfg.validate();
  if (p > 10 || cfg.k > 2 || n > 20)
    throw std::invalid_argument("geweke_joint_test: dims too large (p<=10, k<=2, n<=20)");
  constexpr int kS = detail::GewekeStats::kCount;
  std::array<std::vector<double>, kS> mc, sc;
  for (auto& v : mc) v.reserve(num_samples);
  for (auto& v : sc) v.reserve(num_samples);

  RngHandle rng_mc = rng.split(1), rng_sc = rng.split(2);
  for (int t = 0; t < num_samples; ++t) {
    GibbsState st = init_from_prior(cfg, p, n, rng_mc);
    Matrix data = st.factors * st.loadings.transpose();
    double sig = std::sqrt(st.sigma2);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) data(i, j) += sig * sample_normal(rng_mc);
    auto s = detail::GewekeStats::eval(st, data, cfg.regime);
    for (int q = 0; q < kS; ++q) mc[q].push_back(s[q]);
  }

  GibbsState st = init_from_prior(cfg, p, n, rng_sc);
  Matrix data(n, p);
  for (int t = 0; t < num_samples; ++t) {
    data = st.factors * st.loadings.transpose();
    double sig = std::sqrt(st.sigma2);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) data(i, j) += sig * sample_normal(rng_sc);
    gibbs_step(st, data, cfg, rng_sc, false);
    auto s = detail::GewekeStats::eval(st, data, cfg.regime);
    for (int q = 0; q < kS; ++q) sc[q].push_back(s[q]);
  }

  std::vector<double> z(kS);
  for (int q = 0; q < kS; ++q) {
    auto a = detail::mean_se_iid(mc[q]);
    auto b = detail::mean_se_batch_robust(sc[q]);
    z[q] = (a.mean - b.mean) / std::sqrt(a.se * a.se + b.se * b.se + 1e-300);
  }
  return z;
}

}  // namespace covfac
