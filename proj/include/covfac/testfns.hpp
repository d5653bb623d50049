#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "covfac/dist.hpp"
#include "covfac/matlin.hpp"
#include "covfac/model.hpp"
#include "covfac/rng.hpp"

namespace covfac {

struct TestResult {
  bool reject = false;
  double statistic = 0.0;
};

// Frobenius-regime quadratic-form test between two fixed SPD covariances.
// The eigenvalue bounds are computed from the actual instances, so the
// rejection slack alpha_n is always valid for them.
struct FrobTestSpec {
  SpdMatrix sigma0, sigma1;
  // rho_hi = largest eigenvalue, rho_lo = 1 / smallest eigenvalue, so that
  // 1/rho_lo <= s_min <= s_max <= rho_hi holds with equality
  double rho_hi0 = 0, rho_lo0 = 0, rho_hi1 = 0, rho_lo1 = 0;
  double beta_n = 0, alpha_n = 0;
  double d_n = 0, big_d_n = 0;  // whitened Frobenius gap and log-det gap

  FrobTestSpec(SpdMatrix s0, SpdMatrix s1)
      : sigma0(std::move(s0)), sigma1(std::move(s1)) {
    if (sigma0.dim() != sigma1.dim())
      throw std::invalid_argument("FrobTestSpec: dimension mismatch");
    auto bounds = [](const SpdMatrix& s) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(s.mat(), Eigen::EigenvaluesOnly);
      return std::pair<double, double>{es.eigenvalues().minCoeff(),
                                       es.eigenvalues().maxCoeff()};
    };
    auto [lo0, hi0] = bounds(sigma0);
    auto [lo1, hi1] = bounds(sigma1);
    rho_hi0 = hi0;
    rho_lo0 = 1.0 / lo0;
    rho_hi1 = hi1;
    rho_lo1 = 1.0 / lo1;
    beta_n = 1.0 / ((rho_lo0 * rho_hi1) * (rho_lo0 * rho_hi1));
    alpha_n = beta_n / 2.0;
    if (!(alpha_n > 0.0 && alpha_n < 1.0))
      throw std::invalid_argument("FrobTestSpec: rejection slack outside (0, 1)");
    auto dd = whitened_discrepancy(sigma0, sigma1);
    d_n = dd.first;
    big_d_n = dd.second;
  }
};

// statistic = mean_i y_i' (Sigma0^{-1} - Sigma1^{-1}) y_i - log|Sigma1 Sigma0^{-1}|,
// rejecting when it exceeds -alpha_n d_n^2
inline TestResult frob_test(const Matrix& data, const FrobTestSpec& spec) {
  if (data.cols() != spec.sigma0.dim())
    throw std::invalid_argument("frob_test: data dimension mismatch");
  if (data.rows() < 1) throw std::invalid_argument("frob_test: empty data");
  const double n = static_cast<double>(data.rows());
  Matrix diff = spec.sigma0.inverse() - spec.sigma1.inverse();
  double qbar = (data * diff).cwiseProduct(data).sum() / n;
  TestResult r;
  r.statistic = qbar - spec.big_d_n;
  r.reject = r.statistic >= -spec.alpha_n * spec.d_n * spec.d_n;
  return r;
}

// Operator-norm projection test against a factor-model null. Data are
// projected through loadings0 / c_n to k dimensions, so the test runs in
// O(n p k) and never materializes a p x p sample covariance.
struct ProjTestSpec {
  Matrix loadings0;   // p x k
  double c_n = 1.0;   // projection normalizer, typically ~ Lambda0' Lambda0 scale
  double sigma0_sq = 1.0;
  int sep_j = 1;      // separation index multiplying the threshold radius

  ProjTestSpec(Matrix l0, double c, double s0sq, int j)
      : loadings0(std::move(l0)), c_n(c), sigma0_sq(s0sq), sep_j(j) {
    if (loadings0.rows() < loadings0.cols() || loadings0.cols() < 1)
      throw std::invalid_argument("ProjTestSpec: need p >= k >= 1");
    if (c_n <= 0.0) throw std::invalid_argument("ProjTestSpec: c_n <= 0");
    if (sigma0_sq <= 0.0 || sep_j < 1)
      throw std::invalid_argument("ProjTestSpec: invalid sigma0_sq or j");
  }
  Eigen::Index p() const { return loadings0.rows(); }
  Eigen::Index k() const { return loadings0.cols(); }

  // lower contraction radius sqrt((log p)^2 / n)
  double eps_lower(Eigen::Index n) const {
    if (n < 1) throw std::invalid_argument("ProjTestSpec: n < 1");
    return std::log(static_cast<double>(p())) / std::sqrt(static_cast<double>(n));
  }
  double threshold(Eigen::Index n) const { return sep_j * eps_lower(n) / 2.0; }
};

inline TestResult projection_test(const Matrix& data, const ProjTestSpec& spec) {
  if (data.cols() != spec.p())
    throw std::invalid_argument("projection_test: data dimension mismatch");
  const Eigen::Index n = data.rows();
  if (n < 1) throw std::invalid_argument("projection_test: empty data");
  Matrix x = data * spec.loadings0 / spec.c_n;               // n x k
  Matrix sx = x.transpose() * x / static_cast<double>(n);    // k x k
  Eigen::SelfAdjointEigenSolver<Matrix> es(sx);
  Matrix half = es.eigenvectors() *
                es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                es.eigenvectors().transpose();
  LowRankPlusScalar zhat(spec.loadings0 * half, 0.0);
  LowRankPlusScalar null_cov(spec.loadings0, spec.sigma0_sq);
  TestResult r;
  r.statistic = lowrank_opnorm_diff(zhat, null_cov);
  r.reject = r.statistic > spec.threshold(n);
  return r;
}

// n iid rows from N(0, cov) through the stored Cholesky factor
inline Matrix sample_gaussian(const SpdMatrix& cov, Eigen::Index n, RngHandle& rng) {
  if (n < 1) throw std::invalid_argument("sample_gaussian: n < 1");
  Matrix z(n, cov.dim());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < cov.dim(); ++j) z(i, j) = sample_normal(rng);
  return z * cov.chol_lower().transpose();
}

// A named scenario for the error-rate harness: how to sample data under the
// null and the alternative, and which test to run on them.
struct TestScenario {
  std::string regime;  // "frobenius" or "projection"
  int p = 0, k = 0, j = 0;
  std::function<Matrix(Eigen::Index n, RngHandle&)> sample_null, sample_alt;
  std::function<TestResult(const Matrix&)> run;
};

inline TestScenario make_frob_scenario(SpdMatrix s0, SpdMatrix s1, int j) {
  TestScenario sc;
  sc.regime = "frobenius";
  sc.p = static_cast<int>(s0.dim());
  sc.k = 0;
  sc.j = j;
  auto spec = std::make_shared<FrobTestSpec>(std::move(s0), std::move(s1));
  sc.sample_null = [spec](Eigen::Index n, RngHandle& rng) {
    return sample_gaussian(spec->sigma0, n, rng);
  };
  sc.sample_alt = [spec](Eigen::Index n, RngHandle& rng) {
    return sample_gaussian(spec->sigma1, n, rng);
  };
  sc.run = [spec](const Matrix& data) { return frob_test(data, *spec); };
  return sc;
}

inline TestScenario make_proj_scenario(FactorModelParams null_params,
                                       FactorModelParams alt_params, double c_n,
                                       int j) {
  if (null_params.p() != alt_params.p())
    throw std::invalid_argument("make_proj_scenario: dimension mismatch");
  TestScenario sc;
  sc.regime = "projection";
  sc.p = static_cast<int>(null_params.p());
  sc.k = static_cast<int>(null_params.k());
  sc.j = j;
  auto spec = std::make_shared<ProjTestSpec>(null_params.loadings, c_n,
                                             null_params.sigma2, j);
  auto alt = std::make_shared<FactorModelParams>(std::move(alt_params));
  auto null_p = std::make_shared<FactorModelParams>(std::move(null_params));
  sc.sample_null = [null_p](Eigen::Index n, RngHandle& rng) {
    return simulate_dataset(*null_p, n, rng);
  };
  sc.sample_alt = [alt](Eigen::Index n, RngHandle& rng) {
    return simulate_dataset(*alt, n, rng);
  };
  sc.run = [spec](const Matrix& data) { return projection_test(data, *spec); };
  return sc;
}

struct ErrorRatePoint {
  int n = 0, p = 0, k = 0, j = 0;
  std::string regime;
  double type1 = 0, type1_se = 0, type2 = 0, type2_se = 0;
  std::uint64_t seed = 0;
};

// Monte Carlo type I / type II error frequencies over an n-grid; each cell
// runs on its own split stream, so the table is reproducible and cells are
// independently parallelizable.
inline std::vector<ErrorRatePoint> error_rate_curve(
    const std::vector<TestScenario>& specs, const std::vector<int>& n_grid,
    int replicates, RngHandle& rng) {
  if (replicates < 100)
    throw std::invalid_argument("error_rate_curve: need replicates >= 100");
  if (specs.empty() || n_grid.empty())
    throw std::invalid_argument("error_rate_curve: empty grid");
  std::vector<ErrorRatePoint> out;
  std::uint64_t cell_id = 0;
  for (const auto& sc : specs) {
    for (int n : n_grid) {
      if (n < 1) throw std::invalid_argument("error_rate_curve: n < 1");
      RngHandle cell = rng.split(cell_id);
      int rej_null = 0, acc_alt = 0;
      for (int r = 0; r < replicates; ++r) {
        if (sc.run(sc.sample_null(n, cell)).reject) ++rej_null;
        if (!sc.run(sc.sample_alt(n, cell)).reject) ++acc_alt;
      }
      const double m = static_cast<double>(replicates);
      ErrorRatePoint pt;
      pt.n = n;
      pt.p = sc.p;
      pt.k = sc.k;
      pt.j = sc.j;
      pt.regime = sc.regime;
      pt.type1 = rej_null / m;
      pt.type2 = acc_alt / m;
      pt.type1_se = std::sqrt(pt.type1 * (1.0 - pt.type1) / m);
      pt.type2_se = std::sqrt(pt.type2 * (1.0 - pt.type2) / m);
      pt.seed = cell_id;
      out.push_back(std::move(pt));
      ++cell_id;
    }
  }
  return out;
}

}  // namespace covfac
