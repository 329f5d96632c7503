#include <doctest.h>

#include <cmath>
#include <vector>

#include "afcurve/arbitrage.hpp"
#include "afcurve/particle.hpp"
#include "afcurve/rng.hpp"

using namespace afcurve;

namespace {

FactorParams random_params(Rng& rng) {
  FactorParams p;
  p.kappa = MatXd(3, 3);
  p.sigma = MatXd(3, 3);
  p.theta = VecXd(3);
  for (int i = 0; i < 3; ++i) {
    p.theta[i] = 0.05 * rng.normal();
    for (int j = 0; j < 3; ++j) {
      p.kappa(i, j) = 2.0 * rng.normal();
      p.sigma(i, j) = 0.02 * rng.normal();
    }
  }
  return p;
}

VecXd random_state(Rng& rng) {
  VecXd x(3);
  for (int i = 0; i < 3; ++i) x[i] = 0.04 * rng.normal();
  return x;
}

// Textbook restatement of the excess-return formula, term by term, with no
// shared helpers beyond the loading functions.
double naive_lambda(const VecXd& x, const FactorParams& p, double tau, const NSParams& ns) {
  const auto b = integrated_loadings(tau, ns);
  const auto beta = ns_loadings(tau, ns);
  const auto beta0 = ns_loadings(0.0, ns);
  double conv = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double sij = 0.0;
      for (int k = 0; k < 3; ++k) sij += p.sigma(i, k) * p.sigma(j, k);
      conv += b[std::size_t(i)] * sij * b[std::size_t(j)];
    }
  double drift = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      drift += b[std::size_t(i)] * p.kappa(i, j) * (p.theta[j] - x[j]);
  double spot = 0.0;
  for (int i = 0; i < 3; ++i) spot += (beta[std::size_t(i)] - beta0[std::size_t(i)]) * x[i];
  return 0.5 * conv - drift + spot;
}

}  // namespace

TEST_CASE("excess return vanishes identically at zero tenor") {
  Rng rng(2024);
  const NSParams ns;
  for (int trial = 0; trial < 100000; ++trial) {
    const FactorParams p = random_params(rng);
    const VecXd x = random_state(rng);
    CHECK(lambda_excess(x, p, 0.0, ns) == 0.0);
  }
}

TEST_CASE("excess return matches the term-by-term restatement") {
  Rng rng(77);
  const NSParams ns;
  for (int trial = 0; trial < 200; ++trial) {
    const FactorParams p = random_params(rng);
    const VecXd x = random_state(rng);
    for (double tau : {0.25, 1.0, 5.0, 12.5, 30.0}) {
      const double a = lambda_excess(x, p, tau, ns);
      const double b = naive_lambda(x, p, tau, ns);
      CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }
  }
}

TEST_CASE("penalty equals the plain double-loop average") {
  Rng rng(31);
  const NSParams ns;
  for (double p_norm : {1.0, 2.0, 3.7}) {
    AerConfig cfg = AerConfig::standard(0.0, p_norm);
    for (int n_days : {1, 3, 23, 60}) {
      std::vector<VecXd> states;
      std::vector<FactorParams> params;
      for (int d = 0; d < n_days; ++d) {
        states.push_back(random_state(rng));
        params.push_back(random_params(rng));
      }
      const double fast = aer_penalty(states, params, cfg, ns);

      double total = 0.0;
      for (int d = 0; d < n_days; ++d) {
        double inner = 0.0;
        for (double months : cfg.grid_months) {
          const double lam =
              naive_lambda(states[std::size_t(d)], params[std::size_t(d)], months / 12.0, ns);
          inner += std::pow(std::fabs(lam), p_norm);
        }
        total += std::pow(inner / double(cfg.grid_months.size()), 1.0 / p_norm);
      }
      CHECK(fast == doctest::Approx(total / n_days).epsilon(1e-12));
    }
  }
}

TEST_CASE("penalty through the evaluator seam matches a hand computation") {
  // 2 days x 3 tenors with fixed values; p = 2.
  const double vals[2][3] = {{0.3, -0.4, 1.2}, {0.0, 0.5, -0.5}};
  const double got = aer_penalty_with<double>(2, 3, 2.0, [&](int i, int j) { return vals[i][j]; });
  const double d0 = std::sqrt((0.09 + 0.16 + 1.44) / 3.0);
  const double d1 = std::sqrt((0.0 + 0.25 + 0.25) / 3.0);
  CHECK(got == doctest::Approx(0.5 * (d0 + d1)).epsilon(1e-15));
}

TEST_CASE("penalty input validation") {
  CHECK_THROWS_AS(aer_penalty_with<double>(0, 3, 2.0, [](int, int) { return 0.0; }),
                  std::invalid_argument);
  CHECK_THROWS_AS(aer_penalty_with<double>(2, 0, 2.0, [](int, int) { return 0.0; }),
                  std::invalid_argument);
  CHECK_THROWS_AS(aer_penalty_with<double>(2, 3, 0.5, [](int, int) { return 0.0; }),
                  std::invalid_argument);

  std::vector<VecXd> states(2);
  std::vector<FactorParams> params(3);
  CHECK_THROWS_AS(aer_penalty(states, params, AerConfig::standard(), NSParams{}),
                  std::invalid_argument);
}

TEST_CASE("shape-1 generalized density reduces to the Gaussian") {
  Rng rng(13);
  for (int n : {1, 3, 23}) {
    for (int trial = 0; trial < 20; ++trial) {
      VecXd x(n), c(n), d(n);
      for (int i = 0; i < n; ++i) {
        x[i] = rng.normal();
        c[i] = rng.normal();
        d[i] = 0.5 + rng.uniform();
      }
      const double scale = 0.5 + rng.uniform();
      MggdParams g{1.0, scale, ObsNoise::diagonal(d)};
      MatXd cov = zeros<double>(n, n);
      for (int i = 0; i < n; ++i) cov(i, i) = scale * d[i];
      CHECK(mggd_logpdf(x, c, g) ==
            doctest::Approx(gaussian_logpdf(x, c, cov)).epsilon(1e-12));
    }
  }
}

TEST_CASE("heavier-shape density integrates consistently in one dimension") {
  // For n = 1 the density is p / (2^{1/p} . 2 m^{1/2} Gamma(1/(2p)))^{...};
  // verify by trapezoid integration that it integrates to ~1.
  for (double shape : {0.5, 0.62, 1.0, 1.5}) {
    MggdParams g{shape, 1.0, ObsNoise::iso(1, 1.0)};
    VecXd c{0.0};
    double total = 0.0;
    const double lo = -60.0, hi = 60.0;
    const int steps = 120000;
    const double h = (hi - lo) / steps;
    for (int i = 0; i <= steps; ++i) {
      VecXd x{lo + i * h};
      const double w = (i == 0 || i == steps) ? 0.5 : 1.0;
      total += w * std::exp(mggd_logpdf(x, c, g)) * h;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}
