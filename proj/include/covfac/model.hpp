#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>

#include "covfac/dist.hpp"
#include "covfac/matlin.hpp"
#include "covfac/rng.hpp"

namespace covfac {

struct FactorModelParams {
  Matrix loadings;  // p x k
  double sigma2 = 1.0;

  FactorModelParams(Matrix l, double s2) : loadings(std::move(l)), sigma2(s2) {
    if (loadings.rows() < loadings.cols() || loadings.cols() < 1)
      throw std::invalid_argument("FactorModelParams: need p >= k >= 1");
    if (sigma2 <= 0.0) throw std::invalid_argument("FactorModelParams: sigma2 <= 0");
  }
  Eigen::Index p() const { return loadings.rows(); }
  Eigen::Index k() const { return loadings.cols(); }
};

struct TruthSpec {
  int p = 100;
  int k = 1;
  int s = 10;  // per-column expected nonzeros
  double sigma2_true = 1.0;
  std::uint64_t seed = 1;
  double a3_constant = 3.0;  // deviation budget multiplier on sqrt(k/p)
  int max_retries = 20;

  void validate() const {
    if (p < 1 || k < 1 || k > p || s < 1 || s > p || sigma2_true <= 0.0)
      throw std::invalid_argument("TruthSpec: invalid");
  }
};

// ||(1/c) Lambda^T Lambda - I_k||_2
inline double check_a3(const Matrix& loadings, double c) {
  if (c <= 0.0) throw std::invalid_argument("check_a3: c <= 0");
  Matrix g = loadings.transpose() * loadings / c;
  g.diagonal().array() -= 1.0;
  return operator_norm(SymMatrix(g));
}

// Spike-and-normal loadings truth: lambda_jh ~ (1 - s/p) delta_0 + (s/p) N(0,1),
// regenerated until the near-isometry deviation fits the budget.
inline std::pair<FactorModelParams, double> generate_truth(const TruthSpec& spec) {
  spec.validate();
  RngHandle rng(spec.seed, 0xA3);
  const double pi_incl = static_cast<double>(spec.s) / spec.p;
  const double c_n = static_cast<double>(spec.s);
  const double budget =
      spec.a3_constant * std::sqrt(static_cast<double>(spec.k) / spec.p);
  double best_dev = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < spec.max_retries; ++attempt) {
    Matrix loadings = Matrix::Zero(spec.p, spec.k);
    for (int j = 0; j < spec.p; ++j)
      for (int h = 0; h < spec.k; ++h)
        if (pi_incl >= 1.0 || rng.uniform() < pi_incl)
          loadings(j, h) = sample_normal(rng);
    double dev = check_a3(loadings, c_n);
    best_dev = std::min(best_dev, dev);
    if (dev <= budget)
      return {FactorModelParams(std::move(loadings), spec.sigma2_true), c_n};
  }
  throw std::runtime_error("generate_truth: retry budget exhausted, best deviation " +
                           std::to_string(best_dev) + " > " + std::to_string(budget));
}

// Dense-loadings truth for the Frobenius-regime experiments; sigma2 must lie
// in [1/log n, M_sigma].
inline FactorModelParams generate_truth_dense(int p, int k, double sigma2,
                                              std::uint64_t seed, int n,
                                              double m_sigma) {
  if (n > 2 && (sigma2 < 1.0 / std::log(static_cast<double>(n)) || sigma2 > m_sigma))
    throw std::invalid_argument("generate_truth_dense: sigma2 outside [1/log n, M_sigma]");
  RngHandle rng(seed, 0xAF);
  Matrix loadings(p, k);
  for (int j = 0; j < p; ++j)
    for (int h = 0; h < k; ++h) loadings(j, h) = sample_normal(rng);
  return FactorModelParams(std::move(loadings), sigma2);
}

inline LowRankPlusScalar assemble_cov(const FactorModelParams& params) {
  return LowRankPlusScalar(params.loadings, params.sigma2);
}

inline Matrix simulate_dataset(const FactorModelParams& params, Eigen::Index n,
                               RngHandle& rng) {
  return sample_factor_mvn(params.loadings, params.sigma2, n, rng);
}

}  // namespace covfac
