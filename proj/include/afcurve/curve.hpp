#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "afcurve/linalg.hpp"

// Three-factor exponential yield curve (level / slope / curvature) with a
// fixed decay rate, bond pricing off the fitted curve, and cross-sectional
// state extraction from observed bond prices.

namespace afcurve {

inline constexpr double kDefaultDecay = 0.4488779759;

struct NSParams {
  double lambda = kDefaultDecay;  // per-year decay of the slope loading
};

// Tenor grid in months; the standard grid has 23 points from 3m to 360m.
struct TenorGrid {
  std::vector<double> months;

  static TenorGrid standard23() {
    TenorGrid g;
    for (int m = 3; m <= 24; m += 3) g.months.push_back(m);
    for (int m = 30; m <= 60; m += 6) g.months.push_back(m);
    for (int m = 72; m <= 120; m += 12) g.months.push_back(m);
    for (int m = 180; m <= 360; m += 60) g.months.push_back(m);
    return g;
  }

  int size() const { return int(months.size()); }
  double years(int i) const { return months[std::size_t(i)] / 12.0; }
};

// Yields in decimals (0.0245 = 2.45%), aligned with a TenorGrid.
struct YieldCurve {
  int date_index = 0;
  VecXd yields;
};

struct CashFlow {
  double time;    // years from the valuation date, > 0
  double amount;  // per 100 face
};

struct BondSpec {
  std::string id;
  double coupon_rate = 0.0;  // annual rate in percent of face
  int frequency = 2;         // coupon payments per year
  double maturity_years = 0.0;
  std::vector<CashFlow> cash_flows;

  // Level coupon bond with face 100; coupons step back from maturity.
  static BondSpec make(std::string id, double coupon_rate_pct, int frequency,
                       double maturity_years);
};

struct BondQuote {
  BondSpec spec;
  double observed_price = 0.0;
};

struct BondPanel {
  int date_index = 0;
  std::vector<BondQuote> bonds;
};

// (1 - e^-z)/z, switching to its 2-term Taylor expansion near zero so the
// ratio is well defined as z -> 0.
inline double em1_over(double z) {
  return z < 1e-6 ? 1.0 - 0.5 * z : (1.0 - std::exp(-z)) / z;
}

// Instantaneous forward-rate loadings (1, e^-z, z e^-z), z = lambda*tau.
inline std::array<double, 3> ns_loadings(double tau_years, const NSParams& ns) {
  const double z = ns.lambda * tau_years;
  const double e = std::exp(-z);
  return {1.0, e, z * e};
}

// Integrated loadings B(tau) = integral of the forward loadings over [0,tau].
inline std::array<double, 3> integrated_loadings(double tau_years, const NSParams& ns) {
  const double z = ns.lambda * tau_years;
  const double phi = em1_over(z);
  return {tau_years, tau_years * phi, tau_years * (phi - std::exp(-z))};
}

// Loadings of the zero yield y(tau) = (B(tau)/tau) . X.
inline std::array<double, 3> yield_loadings(double tau_years, const NSParams& ns) {
  const double z = ns.lambda * tau_years;
  const double phi = em1_over(z);
  return {1.0, phi, phi - std::exp(-z)};
}

template <class T>
T yield_at(const VecX<T>& state, double tau_years, const NSParams& ns) {
  if (!(tau_years > 0.0))
    throw std::invalid_argument("yield_at: tenor must be positive");
  const auto w = yield_loadings(tau_years, ns);
  return state[0] * w[0] + state[1] * w[1] + state[2] * w[2];
}

// Discount factor exp(-B(tau) . X) applied to each cash flow.
template <class T>
T price_bond(const BondSpec& bond, const VecX<T>& state, const NSParams& ns) {
  if (bond.cash_flows.empty())
    throw std::invalid_argument("price_bond: bond '" + bond.id + "' has no cash flows");
  using std::exp;
  T price = T(0.0);
  for (const CashFlow& cf : bond.cash_flows) {
    const auto b = integrated_loadings(cf.time, ns);
    price = price + cf.amount * exp(-(state[0] * b[0] + state[1] * b[1] + state[2] * b[2]));
  }
  if (!std::isfinite(value_of(price)))
    throw std::runtime_error("price_bond: non-finite price for bond '" + bond.id + "'");
  return price;
}

template <class T>
VecX<T> reprice_panel(const BondPanel& panel, const VecX<T>& state, const NSParams& ns) {
  VecX<T> prices(int(panel.bonds.size()));
  for (int i = 0; i < prices.size(); ++i)
    prices[i] = price_bond(panel.bonds[std::size_t(i)].spec, state, ns);
  return prices;
}

// Rows dP_i/dX = -sum_j c_ij exp(-B(t_ij) . X) B(t_ij).
template <class T>
MatX<T> panel_jacobian(const BondPanel& panel, const VecX<T>& state, const NSParams& ns) {
  using std::exp;
  const int n = int(panel.bonds.size());
  MatX<T> jac = zeros<T>(n, kStateDim);
  for (int i = 0; i < n; ++i) {
    for (const CashFlow& cf : panel.bonds[std::size_t(i)].spec.cash_flows) {
      const auto b = integrated_loadings(cf.time, ns);
      const T disc = cf.amount * exp(-(state[0] * b[0] + state[1] * b[1] + state[2] * b[2]));
      for (int k = 0; k < kStateDim; ++k) jac(i, k) = jac(i, k) - disc * b[k];
    }
  }
  return jac;
}

struct ExtractResult {
  VecXd state;
  bool converged = false;
  int iterations = 0;
  double grad_norm = 0.0;
  double rmse = 0.0;
};

// Cross-sectional state fit: minimize (1/n) sum (P_obs - P(X))^2 plus a small
// ridge 1e-8 |X - init|^2 that pins down degenerate panels.  Damped
// Gauss-Newton with the analytic price Jacobian.
ExtractResult extract_state(const BondPanel& panel, const NSParams& ns, const VecXd& init);

// Exact least-squares factor fit to a gridded curve; the yield model is
// linear in the state so this is a 3x3 normal-equations solve.
VecXd ols_state(const VecXd& yields, const TenorGrid& grid, const NSParams& ns);

// Error covariance of the cross-sectional fit, s^2 (M^T M)^{-1}, with s^2 the
// residual variance of the fit at `state`.  Quantifies how well each factor
// is identified from a single day's curve.
MatXd ols_state_cov(const VecXd& yields, const VecXd& state, const TenorGrid& grid,
                    const NSParams& ns);

// Same for a bond panel via the price Jacobian at the extracted state:
// s^2 (J^T J)^{-1} with s^2 from the panel's price rmse.
MatXd panel_state_cov(const BondPanel& panel, const VecXd& state, double rmse,
                      const NSParams& ns);

VecXd observed_prices(const BondPanel& panel);

}  // namespace afcurve
