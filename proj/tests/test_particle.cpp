#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "afcurve/particle.hpp"
#include "afcurve/rng.hpp"

using namespace afcurve;

TEST_CASE("effective sample size matches the closed form") {
  VecXd w{0.5, 0.25, 0.25};
  CHECK(ess(w) == doctest::Approx(8.0 / 3.0).epsilon(1e-15));
  VecXd uniform{0.25, 0.25, 0.25, 0.25};
  CHECK(ess(uniform) == doctest::Approx(4.0).epsilon(1e-15));
  VecXd degenerate{1.0, 0.0, 0.0};
  CHECK(ess(degenerate) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("systematic resampling on a worked example") {
  // With N = 3 and u = 0.1 the thresholds (i + 0.1)/3 = .0333, .3667, .7
  // fall against cumulative weights .5, .75, 1.0, selecting 0, 0, 1.
  const std::vector<int> idx = systematic_resample({0.5, 0.25, 0.25}, 0.1);
  REQUIRE(idx.size() == 3);
  CHECK(idx[0] == 0);
  CHECK(idx[1] == 0);
  CHECK(idx[2] == 1);
}

TEST_CASE("offspring counts always sum to the particle count") {
  Rng rng(5);
  for (int trial = 0; trial < 20000; ++trial) {
    const int n = 1 + int(rng.uniform() * 64);
    std::vector<double> w(std::size_t(n));
    double total = 0.0;
    for (double& v : w) {
      v = std::pow(rng.uniform(), 4.0) + 1e-300;  // highly uneven
      total += v;
    }
    for (double& v : w) v /= total;
    const std::vector<int> idx = systematic_resample(w, rng.uniform());
    CHECK(int(idx.size()) == n);
    for (std::size_t k = 1; k < idx.size(); ++k) CHECK(idx[k] >= idx[k - 1]);
    for (int i : idx) {
      CHECK(i >= 0);
      CHECK(i < n);
    }
  }
}

TEST_CASE("expected offspring counts are proportional to the weights") {
  const std::vector<double> w{0.35, 0.05, 0.25, 0.2, 0.15};
  const int n = int(w.size());
  const int reps = 20000;
  Rng rng(99);
  std::vector<double> mean(w.size(), 0.0), m2(w.size(), 0.0);
  for (int r = 0; r < reps; ++r) {
    const std::vector<int> idx = systematic_resample(w, rng.uniform());
    std::vector<int> count(w.size(), 0);
    for (int i : idx) count[std::size_t(i)]++;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double d = count[k] - mean[k];
      mean[k] += d / (r + 1);
      m2[k] += d * (count[k] - mean[k]);
    }
  }
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double se = std::sqrt(m2[k] / (reps - 1) / reps);
    CHECK(std::fabs(mean[k] - n * w[k]) <= 3.0 * se + 1e-9);
  }
}

TEST_CASE("log-space reweighting survives extreme magnitudes") {
  const int n = 4;
  VecXd w(n), lik(n), trans(n), prop(n);
  for (int i = 0; i < n; ++i) {
    w[i] = 0.25;
    lik[i] = -1e4 + i;  // all tiny, one per-decade apart
    trans[i] = -50.0;
    prop[i] = -50.0;
  }
  const VecXd out = weight_step(w, lik, trans, prop);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    CHECK(std::isfinite(out[i]));
    total += out[i];
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  // Largest log-likelihood dominates.
  CHECK(out[3] > out[2]);
  CHECK(out[2] > out[1]);
}

TEST_CASE("initial particle cloud matches its generating moments") {
  FilterState prior;
  prior.mean = VecXd{0.5, -1.0, 2.0};
  MatXd s(3, 3);
  Rng srng(3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) s(i, j) = 0.3 * srng.normal();
  prior.cov = matmul(s, transpose(s));
  for (int i = 0; i < 3; ++i) prior.cov(i, i) += 0.05;

  const int n = 40000;
  const ParticleSet ps = init_particles(prior, n, 77);
  REQUIRE(ps.size() == n);
  double wsum = 0.0;
  for (int i = 0; i < n; ++i) wsum += ps.weights[i];
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-9));

  for (int k = 0; k < 3; ++k) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += ps.states[std::size_t(i)][k];
    mean /= n;
    const double se = std::sqrt(prior.cov(k, k) / n);
    CHECK(std::fabs(mean - prior.mean[k]) < 4.0 * se);
  }
  // Deterministic in the seed.
  const ParticleSet again = init_particles(prior, 64, 123);
  const ParticleSet same = init_particles(prior, 64, 123);
  for (int i = 0; i < 64; ++i)
    CHECK(max_abs_diff(again.states[std::size_t(i)], same.states[std::size_t(i)]) == 0.0);
}

TEST_CASE("particle filter tracks the exact linear-Gaussian posterior") {
  // Small version of the filter-consistency experiment: Gaussian measurement
  // (shape 1, scale 1) so the particle filter and the Kalman filter target
  // the same posterior.
  Rng rng(2);
  const int n = 3, m = 5, steps = 8, particles = 3000;
  MatXd A = identity<double>(n);
  for (int i = 0; i < n; ++i) A(i, i) = 0.9 - 0.05 * i;
  VecXd D{0.01, -0.01, 0.005};
  MatXd Q = identity<double>(n) * 0.02;
  MatXd M(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = rng.normal();
  const double r = 0.05;

  VecXd x{0.2, -0.3, 0.1};
  std::vector<VecXd> ys;
  for (int t = 0; t < steps; ++t) {
    VecXd w(n);
    for (int i = 0; i < n; ++i) w[i] = std::sqrt(Q(i, i)) * rng.normal();
    x = matvec(A, x) + D + w;
    VecXd y(m);
    const VecXd mx = matvec(M, x);
    for (int i = 0; i < m; ++i) y[i] = mx[i] + std::sqrt(r) * rng.normal();
    ys.push_back(y);
  }

  FilterState prior;
  prior.mean = VecXd{0.0, 0.0, 0.0};
  prior.cov = identity<double>(3) * 0.25;
  DiscreteTransition tr{A, D, Q, 1.0};
  const ObsNoise noise = ObsNoise::iso(m, r);

  // Exact filter.
  FilterState kf = prior;
  std::vector<VecXd> kf_means;
  KfOptions opt;
  opt.outlier_guard = false;
  for (int t = 0; t < steps; ++t) {
    kf = kf_predict(kf, tr);
    kf = kf_update(kf, M, ys[std::size_t(t)], noise, opt).posterior;
    kf_means.push_back(kf.mean);
  }

  // Particle filter with the Gaussian special case of the general density.
  ParticleSet ps = init_particles(prior, particles, 11);
  LinearMeasurement<double> meas(M);
  const MggdParams mggd{1.0, 1.0, noise};
  for (int t = 0; t < steps; ++t) {
    const auto res = pf_step(ps, tr, meas, ys[std::size_t(t)], mggd, noise,
                             ResamplePolicy::kEveryStep);
    CHECK(res.ess_fraction > 0.1);
    for (int k = 0; k < 3; ++k) {
      // Monte Carlo standard error of the weighted mean.
      double var = 0.0;
      for (int i = 0; i < ps.size(); ++i) {
        const double d = ps.states[std::size_t(i)][k] - res.posterior_mean[k];
        var += ps.weights[i] * d * d;
      }
      const double se = std::sqrt(var / std::max(1.0, ess(ps.weights)));
      CHECK(std::fabs(res.posterior_mean[k] - kf_means[std::size_t(t)][k]) <
            4.0 * se + 5e-3);
    }
  }
}

TEST_CASE("numeric particle sets lift onto the tape unchanged") {
  FilterState prior;
  prior.mean = VecXd{0.1, 0.2, 0.3};
  prior.cov = identity<double>(3) * 0.1;
  const ParticleSet ps = init_particles(prior, 16, 9);
  const ParticleSetT<double> lifted = lift_particles<double>(ps);
  REQUIRE(lifted.size() == 16);
  CHECK(lifted.seed == ps.seed);
  CHECK(lifted.step == ps.step);
  for (int i = 0; i < 16; ++i) {
    CHECK(max_abs_diff(lifted.states[std::size_t(i)], ps.states[std::size_t(i)]) == 0.0);
    CHECK(max_abs_diff(lifted.upd_means[std::size_t(i)], ps.upd_means[std::size_t(i)]) == 0.0);
  }
}

TEST_CASE("density parameter validation") {
  VecXd x{0.0};
  VecXd c{0.0};
  MggdParams bad_p{0.0, 1.0, ObsNoise::iso(1, 1.0)};
  CHECK_THROWS_AS(mggd_logpdf(x, c, bad_p), std::invalid_argument);
  MggdParams bad_m{1.0, -1.0, ObsNoise::iso(1, 1.0)};
  CHECK_THROWS_AS(mggd_logpdf(x, c, bad_m), std::invalid_argument);
  MggdParams wrong_dim{1.0, 1.0, ObsNoise::iso(2, 1.0)};
  CHECK_THROWS_AS(mggd_logpdf(x, c, wrong_dim), std::invalid_argument);
}
