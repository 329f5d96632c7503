#pragma once

#include <functional>
#include <string>
#include <vector>

#include "afcurve/curve.hpp"
#include "afcurve/dynamics.hpp"
#include "afcurve/linalg.hpp"

// Arbitrage diagnostics.  For an affine curve f(t,tau) = beta_tau . X_t with
// factor dynamics dX = kappa (theta - X) dt + sigma dW, the instantaneous
// excess return of the tau-bond over the short rate is
//   Lambda(t,tau) = 1/2 B_tau Sigma B_tau^T - B_tau kappa (theta - X_t)
//                   + (beta_tau - beta_0) . X_t,
// which is identically zero exactly when the model admits no arbitrage.

namespace afcurve {

struct AerConfig {
  std::vector<double> grid_months;  // tenors the penalty averages over
  double p = 2.0;                   // inner norm exponent, p >= 1
  double weight = 0.0;              // multiplier used by the composite loss

  static AerConfig standard(double weight = 0.0, double p = 2.0) {
    AerConfig c;
    c.grid_months = TenorGrid::standard23().months;
    c.p = p;
    c.weight = weight;
    return c;
  }
};

template <class T>
T lambda_excess(const VecX<T>& state, const FactorParamsT<T>& params, double tau_years,
                const NSParams& ns) {
  const auto b = integrated_loadings(tau_years, ns);
  const auto beta = ns_loadings(tau_years, ns);
  const auto beta0 = ns_loadings(0.0, ns);

  // 1/2 B Sigma B^T with Sigma = sigma sigma^T: expand through sigma directly
  // as 1/2 |sigma^T B|^2 so only 3 dot products are needed.
  T convexity = T(0.0);
  for (int j = 0; j < kStateDim; ++j) {
    T col = params.sigma(0, j) * b[0];
    for (int i = 1; i < kStateDim; ++i) col = col + params.sigma(i, j) * b[i];
    convexity = convexity + col * col;
  }
  convexity = convexity * 0.5;

  T drift = T(0.0);
  for (int i = 0; i < kStateDim; ++i) {
    T row = T(0.0);
    for (int j = 0; j < kStateDim; ++j) row = row + params.kappa(i, j) * (params.theta[j] - state[j]);
    drift = drift + b[i] * row;
  }

  T spot = T(0.0);
  for (int i = 0; i < kStateDim; ++i) spot = spot + (beta[i] - beta0[i]) * state[i];

  return convexity - drift + spot;
}

// Average excess-return penalty over days i and grid tenors j:
//   (1/n) sum_i ( (1/m) sum_j |Lambda_ij|^p )^{1/p}.
// The evaluator seam lets tests feed synthetic Lambda streams.
template <class T, class F>
T aer_penalty_with(int n_days, int n_tenors, double p, F&& lambda_at) {
  if (n_days <= 0 || n_tenors <= 0)
    throw std::invalid_argument("aer_penalty: empty day or tenor set");
  if (!(p >= 1.0)) throw std::invalid_argument("aer_penalty: exponent p must be >= 1");
  using std::abs;
  using std::pow;
  if constexpr (std::is_same_v<T, double>) {
    // Pairwise reduction in both loops keeps the sum deterministic and
    // accurate for large streams.
    std::vector<double> day_terms(static_cast<std::size_t>(n_days));
    std::vector<double> inner(static_cast<std::size_t>(n_tenors));
    for (int i = 0; i < n_days; ++i) {
      for (int j = 0; j < n_tenors; ++j)
        inner[std::size_t(j)] = std::pow(std::fabs(lambda_at(i, j)), p);
      day_terms[std::size_t(i)] =
          std::pow(pairwise_sum(inner) / n_tenors, 1.0 / p);
    }
    return pairwise_sum(day_terms) / n_days;
  } else {
    T total = T(0.0);
    for (int i = 0; i < n_days; ++i) {
      T inner = T(0.0);
      for (int j = 0; j < n_tenors; ++j) inner = inner + pow(abs(lambda_at(i, j)), p);
      total = total + pow(inner * (1.0 / n_tenors), 1.0 / p);
    }
    return total * (1.0 / n_days);
  }
}

template <class T>
T aer_penalty(const std::vector<VecX<T>>& states, const std::vector<FactorParamsT<T>>& params,
              const AerConfig& cfg, const NSParams& ns) {
  if (states.size() != params.size())
    throw std::invalid_argument("aer_penalty: states/params length mismatch");
  const int m = int(cfg.grid_months.size());
  return aer_penalty_with<T>(int(states.size()), m, cfg.p, [&](int i, int j) {
    return lambda_excess(states[std::size_t(i)], params[std::size_t(i)],
                         cfg.grid_months[std::size_t(j)] / 12.0, ns);
  });
}

struct AerReportRow {
  double tenor_months = 0.0;
  double mean_aer = 0.0;      // signed mean of Lambda over days
  double mean_abs_aer = 0.0;  // mean of |Lambda| over days
  std::string split;          // "train" or "test"
};

std::vector<AerReportRow> aer_report(const std::vector<VecXd>& states,
                                     const std::vector<FactorParams>& params,
                                     const AerConfig& cfg, const NSParams& ns,
                                     const std::string& split);

void write_aer_csv(const std::string& path, const std::vector<AerReportRow>& rows);

}  // namespace afcurve
