#include "afcurve/curve.hpp"

#include <algorithm>

namespace afcurve {

BondSpec BondSpec::make(std::string id, double coupon_rate_pct, int frequency,
                        double maturity_years) {
  if (frequency <= 0) throw std::invalid_argument("BondSpec: frequency must be positive");
  if (!(maturity_years > 0.0))
    throw std::invalid_argument("BondSpec: maturity must be positive");
  BondSpec b;
  b.id = std::move(id);
  b.coupon_rate = coupon_rate_pct;
  b.frequency = frequency;
  b.maturity_years = maturity_years;
  const double step = 1.0 / frequency;
  const double coupon = 100.0 * coupon_rate_pct / 100.0 / frequency;
  std::vector<CashFlow> flows;
  for (double t = maturity_years; t > 1e-9; t -= step)
    flows.push_back(CashFlow{t, coupon});
  std::reverse(flows.begin(), flows.end());
  if (flows.empty()) flows.push_back(CashFlow{maturity_years, 0.0});
  flows.back().amount += 100.0;
  b.cash_flows = std::move(flows);
  return b;
}

VecXd observed_prices(const BondPanel& panel) {
  VecXd p(int(panel.bonds.size()));
  for (int i = 0; i < p.size(); ++i) p[i] = panel.bonds[std::size_t(i)].observed_price;
  return p;
}

VecXd ols_state(const VecXd& yields, const TenorGrid& grid, const NSParams& ns) {
  if (yields.size() != grid.size())
    throw std::invalid_argument("ols_state: yields/grid size mismatch");
  MatXd mtm = zeros<double>(kStateDim, kStateDim);
  VecXd mty = zeros_vec<double>(kStateDim);
  for (int i = 0; i < grid.size(); ++i) {
    const auto w = yield_loadings(grid.years(i), ns);
    for (int a = 0; a < kStateDim; ++a) {
      mty[a] += w[std::size_t(a)] * yields[i];
      for (int b = 0; b < kStateDim; ++b) mtm(a, b) += w[std::size_t(a)] * w[std::size_t(b)];
    }
  }
  const MatXd l = cholesky(mtm);
  return chol_solve(l, mty);
}

MatXd ols_state_cov(const VecXd& yields, const VecXd& state, const TenorGrid& grid,
                    const NSParams& ns) {
  if (yields.size() != grid.size())
    throw std::invalid_argument("ols_state_cov: yields/grid size mismatch");
  const int m = grid.size();
  MatXd mtm = zeros<double>(kStateDim, kStateDim);
  double rss = 0.0;
  for (int i = 0; i < m; ++i) {
    const auto w = yield_loadings(grid.years(i), ns);
    double fit = 0.0;
    for (int a = 0; a < kStateDim; ++a) {
      fit += w[std::size_t(a)] * state[a];
      for (int b = 0; b < kStateDim; ++b) mtm(a, b) += w[std::size_t(a)] * w[std::size_t(b)];
    }
    rss += (yields[i] - fit) * (yields[i] - fit);
  }
  const double s2 = rss / std::max(1, m - kStateDim);
  MatXd cov = chol_solve_mat(cholesky(mtm), identity<double>(kStateDim));
  for (int a = 0; a < kStateDim; ++a)
    for (int b = 0; b < kStateDim; ++b) cov(a, b) *= s2;
  return cov;
}

MatXd panel_state_cov(const BondPanel& panel, const VecXd& state, double rmse,
                      const NSParams& ns) {
  const int m = int(panel.bonds.size());
  if (m == 0) throw std::invalid_argument("panel_state_cov: empty bond panel");
  const MatXd jac = panel_jacobian(panel, state, ns);
  MatXd jtj = zeros<double>(kStateDim, kStateDim);
  for (int i = 0; i < m; ++i)
    for (int a = 0; a < kStateDim; ++a)
      for (int b = 0; b < kStateDim; ++b) jtj(a, b) += jac(i, a) * jac(i, b);
  for (int a = 0; a < kStateDim; ++a) jtj(a, a) += 1e-10;
  const double s2 = rmse * rmse * m / std::max(1, m - kStateDim);
  MatXd cov = chol_solve_mat(cholesky(jtj), identity<double>(kStateDim));
  for (int a = 0; a < kStateDim; ++a)
    for (int b = 0; b < kStateDim; ++b) cov(a, b) *= s2;
  return cov;
}

ExtractResult extract_state(const BondPanel& panel, const NSParams& ns, const VecXd& init) {
  if (panel.bonds.empty())
    throw std::invalid_argument("extract_state: empty bond panel");
  constexpr double kRidge = 1e-8;
  constexpr double kGradTol = 1e-10;
  constexpr int kMaxIter = 500;
  const int n = int(panel.bonds.size());
  const VecXd target = observed_prices(panel);

  VecXd x = init;
  double mu = 1e-6;  // Levenberg damping

  auto objective = [&](const VecXd& s, VecXd* grad_out) {
    const VecX<double> prices = reprice_panel(panel, s, ns);
    double f = 0.0;
    VecXd r(n);
    for (int i = 0; i < n; ++i) {
      r[i] = target[i] - prices[i];
      f += r[i] * r[i];
    }
    f /= n;
    for (int k = 0; k < kStateDim; ++k) {
      const double d = s[k] - init[k];
      f += kRidge * d * d;
    }
    if (grad_out) {
      const MatXd jac = panel_jacobian(panel, s, ns);
      *grad_out = zeros_vec<double>(kStateDim);
      for (int k = 0; k < kStateDim; ++k) {
        double g = 0.0;
        for (int i = 0; i < n; ++i) g += -2.0 / n * r[i] * jac(i, k);
        g += 2.0 * kRidge * (s[k] - init[k]);
        (*grad_out)[k] = g;
      }
    }
    return f;
  };

  ExtractResult result;
  VecXd grad;
  double f = objective(x, &grad);
  for (int iter = 0; iter < kMaxIter; ++iter) {
    result.iterations = iter + 1;
    double gmax = 0.0;
    for (int k = 0; k < kStateDim; ++k) gmax = std::max(gmax, std::fabs(grad[k]));
    result.grad_norm = gmax;
    if (gmax < kGradTol) {
      result.converged = true;
      break;
    }

    // Gauss-Newton normal equations with Levenberg damping and the ridge.
    const MatXd jac = panel_jacobian(panel, x, ns);
    MatXd h = zeros<double>(kStateDim, kStateDim);
    for (int a = 0; a < kStateDim; ++a)
      for (int b = 0; b < kStateDim; ++b) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += jac(i, a) * jac(i, b);
        h(a, b) = 2.0 / n * s + (a == b ? 2.0 * kRidge : 0.0);
      }

    bool stepped = false;
    for (int attempt = 0; attempt < 40 && !stepped; ++attempt) {
      MatXd hd = h;
      for (int k = 0; k < kStateDim; ++k) hd(k, k) += mu;
      VecXd delta;
      try {
        const MatXd l = cholesky(hd);
        VecXd rhs(kStateDim);
        for (int k = 0; k < kStateDim; ++k) rhs[k] = -grad[k];
        delta = chol_solve(l, rhs);
      } catch (const SingularMatrixError&) {
        mu = std::max(mu * 10.0, 1e-12);
        continue;
      }
      VecXd cand = x;
      for (int k = 0; k < kStateDim; ++k) cand[k] += delta[k];
      VecXd cand_grad;
      double cand_f;
      try {
        cand_f = objective(cand, &cand_grad);
      } catch (const std::runtime_error&) {
        mu *= 10.0;
        continue;
      }
      if (cand_f <= f) {
        x = cand;
        f = cand_f;
        grad = cand_grad;
        mu = std::max(mu * 0.3, 1e-12);
        stepped = true;
      } else {
        mu *= 10.0;
      }
    }
    if (!stepped) break;  // damping exhausted; report non-convergence
  }

  result.state = x;
  const VecXd prices = reprice_panel(panel, x, ns);
  double sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = target[i] - prices[i];
    sq += e * e;
  }
  result.rmse = std::sqrt(sq / n);
  {
    VecXd g;
    objective(x, &g);
    double gmax = 0.0;
    for (int k = 0; k < kStateDim; ++k) gmax = std::max(gmax, std::fabs(g[k]));
    result.grad_norm = gmax;
    if (gmax < kGradTol) result.converged = true;
  }
  return result;
}

}  // namespace afcurve
