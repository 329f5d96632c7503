#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "afcurve/filters.hpp"
#include "afcurve/rng.hpp"

using namespace afcurve;

namespace {

struct LinearModel {
  MatXd A, Q, M;
  VecXd D, mu0;
  MatXd P0;
  double r = 1e-3;
  std::vector<VecXd> xs, ys;
};

LinearModel make_model(int m, int steps, std::uint64_t seed) {
  Rng rng(seed);
  const int n = 3;
  LinearModel md;
  md.A = MatXd(n, n);
  md.D = VecXd(n);
  md.M = MatXd(m, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) md.A(i, j) = 0.2 * rng.normal() / (i == j ? 1.0 : 3.0);
    md.A(i, i) += 0.6;
    md.D[i] = 0.01 * rng.normal();
  }
  MatXd s(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s(i, j) = 0.05 * rng.normal();
  md.Q = matmul(s, transpose(s));
  for (int i = 0; i < n; ++i) md.Q(i, i) += 1e-4;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) md.M(i, j) = rng.normal();
  md.mu0 = VecXd(n);
  for (int i = 0; i < n; ++i) md.mu0[i] = rng.normal();
  md.P0 = identity<double>(n);

  VecXd x = md.mu0;
  const MatXd ql = cholesky(md.Q);
  for (int t = 0; t < steps; ++t) {
    VecXd w(n);
    for (int i = 0; i < n; ++i) w[i] = rng.normal();
    x = matvec(md.A, x) + md.D + matvec(ql, w);
    md.xs.push_back(x);
    const VecXd mx = matvec(md.M, x);
    VecXd y(m);
    for (int i = 0; i < m; ++i) y[i] = mx[i] + std::sqrt(md.r) * rng.normal();
    md.ys.push_back(y);
  }
  return md;
}

// Posterior mean of the whole state path by batch Bayesian least squares on
// the joint Gaussian; the filtered mean at the last included step must agree.
Eigen::VectorXd batch_solve(const LinearModel& md, int upto) {
  const int n = 3, m = md.M.rows(), T = upto + 1;
  const int dim = n * T;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd Ae(n, n), Qe(n, n), P0e(n, n), Me(m, n);
  Eigen::VectorXd De(n), m0(n);
  for (int i = 0; i < n; ++i) {
    De(i) = md.D[i];
    m0(i) = md.mu0[i];
    for (int j = 0; j < n; ++j) {
      Ae(i, j) = md.A(i, j);
      Qe(i, j) = md.Q(i, j);
      P0e(i, j) = md.P0(i, j);
    }
  }
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) Me(i, j) = md.M(i, j);

  const Eigen::VectorXd mu1 = Ae * m0 + De;
  const Eigen::MatrixXd S1 = (Ae * P0e * Ae.transpose() + Qe).inverse();
  H.block(0, 0, n, n) += S1;
  b.segment(0, n) += S1 * mu1;
  const Eigen::MatrixXd Qi = Qe.inverse();
  for (int k = 1; k < T; ++k) {
    const int a = n * (k - 1), c = n * k;
    H.block(a, a, n, n) += Ae.transpose() * Qi * Ae;
    H.block(a, c, n, n) -= Ae.transpose() * Qi;
    H.block(c, a, n, n) -= Qi * Ae;
    H.block(c, c, n, n) += Qi;
    b.segment(a, n) -= Ae.transpose() * Qi * De;
    b.segment(c, n) += Qi * De;
  }
  for (int k = 0; k < T; ++k) {
    const int c = n * k;
    Eigen::VectorXd ye(m);
    for (int i = 0; i < m; ++i) ye(i) = md.ys[std::size_t(k)][i];
    H.block(c, c, n, n) += Me.transpose() * Me / md.r;
    b.segment(c, n) += Me.transpose() * ye / md.r;
  }
  return H.ldlt().solve(b);
}

}  // namespace

TEST_CASE("filtered means match batch Bayesian least squares") {
  const int steps = 12;
  const LinearModel md = make_model(5, steps, 17);
  FilterState st{md.mu0, md.P0, 0};
  DiscreteTransition tr{md.A, md.D, md.Q, 1.0};
  KfOptions opt;
  opt.outlier_guard = false;
  double worst = 0.0;
  for (int t = 0; t < steps; ++t) {
    st = kf_predict(st, tr);
    st = kf_update(st, md.M, md.ys[std::size_t(t)], ObsNoise::iso(md.M.rows(), md.r), opt)
             .posterior;
    const Eigen::VectorXd sol = batch_solve(md, t);
    for (int i = 0; i < 3; ++i)
      worst = std::max(worst, std::fabs(sol(3 * t + i) - st.mean[i]));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("generic-measurement update with a linear map equals the linear filter") {
  const LinearModel md = make_model(7, 6, 23);
  FilterState st{md.mu0, md.P0, 0};
  DiscreteTransition tr{md.A, md.D, md.Q, 1.0};
  const ObsNoise noise = ObsNoise::iso(7, md.r);
  for (int t = 0; t < 6; ++t) {
    st = kf_predict(st, tr);
    // Plain linear update.
    const auto lin = kf_update(st, md.M, md.ys[std::size_t(t)], noise, KfOptions{});
    // Extended-style update: innovation from the (here linear) measurement
    // function evaluated at the prior mean, Jacobian supplied separately.
    const VecXd predicted = matvec(md.M, st.mean);
    const VecXd innovation = md.ys[std::size_t(t)] - predicted;
    const auto ext = kf_update_core(st, md.M, innovation, noise, KfOptions{});
    CHECK(max_abs_diff(lin.posterior.mean, ext.posterior.mean) < 1e-15);
    CHECK(max_abs_diff(lin.posterior.cov, ext.posterior.cov) < 1e-15);
    st = lin.posterior;
  }
}

TEST_CASE("price-panel extended update shrinks toward the generating state") {
  const NSParams ns;
  const VecXd truth{0.028, -0.008, 0.011};
  BondPanel panel;
  for (int i = 0; i < 18; ++i) {
    BondSpec spec = BondSpec::make("b" + std::to_string(i), 1.0 + 0.4 * i, 2, 0.5 + 1.6 * i);
    panel.bonds.push_back({std::move(spec), 0.0});
  }
  for (auto& q : panel.bonds) q.observed_price = price_bond(q.spec, truth, ns);

  FilterState prior;
  prior.mean = VecXd{0.02, 0.0, 0.0};
  prior.cov = identity<double>(3) * 1e-4;
  const auto upd = ekf_update(prior, panel, ObsNoise::iso(18, 1e-6), ns, KfOptions{});
  double before = 0.0, after = 0.0;
  for (int k = 0; k < 3; ++k) {
    before += std::pow(prior.mean[k] - truth[k], 2);
    after += std::pow(upd.posterior.mean[k] - truth[k], 2);
  }
  CHECK(after < 0.05 * before);
}

TEST_CASE("joseph and standard covariance forms coincide at the optimal gain") {
  const LinearModel md = make_model(5, 1, 41);
  FilterState st{md.mu0, md.P0, 0};
  DiscreteTransition tr{md.A, md.D, md.Q, 1.0};
  st = kf_predict(st, tr);
  KfOptions joseph;
  KfOptions plain;
  plain.joseph = false;
  const auto a = kf_update(st, md.M, md.ys[0], ObsNoise::iso(5, md.r), joseph);
  const auto b = kf_update(st, md.M, md.ys[0], ObsNoise::iso(5, md.r), plain);
  CHECK(max_abs_diff(a.posterior.cov, b.posterior.cov) < 1e-12);
  // Joseph form stays symmetric PSD.
  CHECK_NOTHROW(cholesky(a.posterior.cov));
}

TEST_CASE("extreme innovations get their noise inflated, not dropped") {
  FilterState prior;
  prior.mean = VecXd{0.0, 0.0, 0.0};
  prior.cov = identity<double>(3) * 1e-4;
  MatXd m_mat = zeros<double>(2, 3);
  m_mat(0, 0) = 1.0;
  m_mat(1, 1) = 1.0;
  VecXd y{5.0, 1e-3};  // first component is wildly off
  const ObsNoise noise = ObsNoise::iso(2, 1e-4);

  KfOptions guarded;  // defaults: guard on, threshold 8
  const auto g = kf_update(prior, m_mat, y, noise, guarded);
  REQUIRE(g.outliers.size() == 1);
  CHECK(g.outliers[0] == 0);

  KfOptions open;
  open.outlier_guard = false;
  const auto u = kf_update(prior, m_mat, y, noise, open);
  // The guarded posterior moves far less along the outlying direction.
  CHECK(std::fabs(g.posterior.mean[0]) < 0.2 * std::fabs(u.posterior.mean[0]));
  // The clean component is treated the same way.
  CHECK(g.posterior.mean[1] == doctest::Approx(u.posterior.mean[1]).epsilon(1e-12));
}

TEST_CASE("a singular innovation covariance is regularized and flagged") {
  FilterState prior;
  prior.mean = VecXd{0.0, 0.0, 0.0};
  prior.cov = zeros<double>(3, 3);  // no prior uncertainty
  MatXd m_mat = zeros<double>(2, 3);
  m_mat(0, 0) = 1.0;
  m_mat(1, 1) = 1.0;
  VecXd y{0.01, -0.02};
  ObsNoise noise = ObsNoise::diagonal(VecXd{0.0, 0.0});  // and no measurement noise
  KfOptions opt;
  opt.outlier_guard = false;
  const auto r = kf_update(prior, m_mat, y, noise, opt);
  CHECK(r.regularized);
  for (int k = 0; k < 3; ++k) CHECK(std::isfinite(r.posterior.mean[k]));
}

TEST_CASE("measurement matrix rows are the per-tenor yield loadings") {
  const NSParams ns;
  const TenorGrid grid = TenorGrid::standard23();
  const MatXd m = yield_measurement_matrix(grid, ns);
  REQUIRE(m.rows() == grid.size());
  REQUIRE(m.cols() == 3);
  for (int i = 0; i < grid.size(); ++i) {
    const auto w = yield_loadings(grid.years(i), ns);
    for (int k = 0; k < 3; ++k) CHECK(m(i, k) == doctest::Approx(w[std::size_t(k)]).epsilon(1e-15));
  }
}

TEST_CASE("update input validation") {
  FilterState prior;
  prior.mean = VecXd{0.0, 0.0, 0.0};
  prior.cov = identity<double>(3);
  MatXd bad(2, 2);
  VecXd y{0.0, 0.0};
  CHECK_THROWS_AS(kf_update(prior, bad, y, ObsNoise::iso(2, 1.0), KfOptions{}),
                  std::invalid_argument);
  MatXd ok = zeros<double>(2, 3);
  CHECK_THROWS_AS(kf_update(prior, ok, y, ObsNoise::iso(3, 1.0), KfOptions{}),
                  std::invalid_argument);
}

TEST_CASE("prediction loss is the mean per-day mean squared innovation") {
  std::vector<VecXd> innovations;
  innovations.push_back(VecXd{3.0, -4.0});        // mean square 12.5
  innovations.push_back(VecXd{1.0, 1.0, 1.0});    // mean square 1
  CHECK(prediction_loss(innovations) == doctest::Approx(0.5 * (12.5 + 1.0)).epsilon(1e-15));
  CHECK_THROWS_AS(prediction_loss(std::vector<VecXd>{}), std::invalid_argument);
}
