#include <catch2/catch_amalgamated.hpp>

#include "covfac/priors.hpp"
#include "support/oracles.hpp"

using namespace covfac;

TEST_CASE("sample_ps: symmetry and conditional l1 moment") {
  auto spec = ShrinkagePriorSpec::with_defaults(10);
  RngHandle rng(21);
  const int n = 100000;
  std::vector<std::vector<double>> comp(10, std::vector<double>());
  for (int i = 0; i < n; ++i) {
    auto d = sample_ps(spec, rng);
    for (int j = 0; j < 10; ++j) comp[j].push_back(d.theta[j]);
  }
  for (int j = 0; j < 10; ++j) {
    auto ms = oracle::mean_se(comp[j]);
    CHECK(std::fabs(ms.mean) < 3.0 * ms.se);
  }

  // E[||theta||_1 | tau, gamma] = tau for fixed hyperparameters
  double tau = 2.5;
  std::vector<double> gamma = {0.5, 0.3, 0.2};
  std::vector<double> l1(50000);
  for (auto& v : l1) {
    double s = 0.0;
    for (double g : gamma) s += std::fabs(sample_de(tau * g, rng));
    v = s;
  }
  auto ms = oracle::mean_se(l1);
  CHECK(std::fabs(ms.mean - tau) < 3.0 * ms.se);
}

TEST_CASE("sample_ps at m=1: theta | tau is DE(tau)") {
  ShrinkagePriorSpec spec;
  spec.m = 1;
  spec.alpha = 0.5;
  spec.a_tau = 3.0;
  spec.b_tau = 3.0;
  RngHandle rng(22);
  // gamma is identically 1, so theta/tau ~ DE(1) after conditioning on tau
  std::vector<double> std_draws(30000);
  for (auto& v : std_draws) {
    auto d = sample_ps(spec, rng);
    REQUIRE(d.gamma.size() == 1);
    REQUIRE(d.gamma[0] == Catch::Approx(1.0).margin(1e-12));
    v = d.theta[0] / d.tau;
  }
  double ks = oracle::ks_statistic(std_draws,
                                   [](double x) { return laplace_cdf(x, 1.0); });
  CHECK(ks < oracle::ks_critical(std_draws.size(), 1e-3));
}

TEST_CASE("sample_pl1: inclusion rate and exact zeros") {
  PointMassMixtureSpec spec;
  spec.m = 200;
  spec.kappa = 2.0;
  RngHandle rng(23);
  double epi = 1.0 / (spec.kappa * spec.m + 2.0);
  const int reps = 20000;
  std::vector<double> frac(reps);
  std::vector<double> slab_draws;
  for (int i = 0; i < reps; ++i) {
    auto d = sample_pl1(spec, rng);
    int inc = 0;
    for (int j = 0; j < spec.m; ++j) {
      if (d.inclusion[j]) {
        ++inc;
        if (slab_draws.size() < 20000) slab_draws.push_back(d.theta[j]);
      } else {
        REQUIRE(d.theta[j] == 0.0);  // bitwise zero
      }
    }
    frac[i] = inc / static_cast<double>(spec.m);
  }
  auto ms = oracle::mean_se(frac);
  CHECK(std::fabs(ms.mean - epi) < 3.0 * ms.se);
  // slab draws conditional on inclusion follow the slab law
  double ks = oracle::ks_statistic(slab_draws,
                                   [](double x) { return laplace_cdf(x, 1.0); });
  CHECK(ks < oracle::ks_critical(slab_draws.size(), 1e-3));
}

TEST_CASE("supp_delta") {
  std::vector<double> theta = {0.5, 0.0, -2.0};
  CHECK(supp_delta(theta, 1.0) == std::vector<int>{2});
  CHECK(supp_delta(theta, 0.0) == std::vector<int>{0, 2});
  std::vector<double> nozeros = {0.1, -0.2, 3.0};
  CHECK(supp_delta(nozeros, 0.0).size() == 3);
  CHECK_THROWS_AS(supp_delta(theta, -1.0), std::invalid_argument);

  // monotone in delta and idempotent under re-thresholding
  RngHandle rng(24);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> v(20);
    for (auto& x : v) x = sample_normal(rng);
    double d1 = rng.uniform(), d2 = d1 + rng.uniform();
    auto s1 = supp_delta(v, d1), s2 = supp_delta(v, d2);
    for (int j : s2) CHECK(std::count(s1.begin(), s1.end(), j) == 1);
    std::vector<double> kept(v.size(), 0.0);
    for (int j : s1) kept[j] = v[j];
    CHECK(supp_delta(kept, d1) == s1);
  }
}

TEST_CASE("log_density_ps: components and symmetry") {
  ShrinkagePriorSpec spec;
  spec.m = 1;
  spec.alpha = 0.7;
  spec.a_tau = 2.0;
  spec.b_tau = 3.0;
  double tau = 1.3;
  double got = log_density_ps({0.4}, tau, {1.0}, spec);
  double want = laplace_logpdf(0.4, tau) + invgamma_logpdf(tau, 2.0, 3.0);
  CHECK(got == Catch::Approx(want).epsilon(1e-12));

  ShrinkagePriorSpec spec2;
  spec2.m = 3;
  spec2.alpha = 0.5;
  spec2.a_tau = 2.0;
  spec2.b_tau = 2.0;
  std::vector<double> g = {0.2, 0.5, 0.3};
  double a = log_density_ps({0.1, -0.7, 0.3}, 1.1, g, spec2);
  double b = log_density_ps({-0.1, 0.7, -0.3}, 1.1, g, spec2);
  CHECK(a == Catch::Approx(b).epsilon(1e-13));

  CHECK(std::isinf(log_density_ps({0.1, -0.7, 0.3}, 1.1, {0.5, 0.5, 0.0}, spec2)));
}

TEST_CASE("log_density_ps normalizes at m=2 (quadrature oracle)") {
  ShrinkagePriorSpec spec;
  spec.m = 2;
  spec.alpha = 2.0;
  spec.a_tau = 3.0;
  spec.b_tau = 3.0;
  // integrate exp(log_density) over theta in R^2, gamma1 in (0,1), tau > 0
  auto inner_theta = [&](double tau, double g1) {
    // DE integrates to 1 analytically in each coordinate; only gamma and tau
    // densities remain, so integrate those numerically as the oracle and use
    // the DE closed form to cut dimension honestly:
    // f(theta|tau,gamma) integrates to 1 for any scales > 0.
    double aj = spec.alpha / 2.0;
    double lg = std::lgamma(spec.alpha) - 2.0 * std::lgamma(aj) +
                (aj - 1.0) * (std::log(g1) + std::log1p(-g1));
    return std::exp(lg + invgamma_logpdf(tau, spec.a_tau, spec.b_tau));
  };
  // log-substitution in tau resolves the sharp inverse-gamma peak
  double total = oracle::simpson(
      [&](double u) {
        double tau = std::exp(u);
        return tau * oracle::simpson(
                         [&](double g1) { return inner_theta(tau, g1); },
                         1e-6, 1.0 - 1e-6, 400);
      },
      std::log(1e-4), std::log(60.0), 2000);
  CHECK(total == Catch::Approx(1.0).epsilon(1e-3));

  // spot-check the full joint against its factors at a point
  double v = log_density_ps({0.3, -0.2}, 0.9, {0.4, 0.6}, spec);
  double manual = std::log(inner_theta(0.9, 0.4)) +
                  laplace_logpdf(0.3, 0.9 * 0.4) + laplace_logpdf(-0.2, 0.9 * 0.6);
  CHECK(v == Catch::Approx(manual).epsilon(1e-10));
}
