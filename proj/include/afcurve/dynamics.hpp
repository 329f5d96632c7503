#pragma once

#include <cstdint>
#include <vector>

#include "afcurve/linalg.hpp"
#include "afcurve/rng.hpp"

// Discrete-time dynamics of the curve factors under
//   dX_t = kappa (theta - X_t) dt + sigma dW_t.
// Over a step of length dt the exact discretization is
//   X_{k+1} = A X_k + D + w_k,   A = exp(-kappa dt),  D = (I - A) theta,
//   w_k ~ N(0, Q),  Q = int_0^dt exp(-kappa u) Sigma exp(-kappa^T u) du,
// with Sigma = sigma sigma^T.

namespace afcurve {

inline constexpr double kTradingDt = 1.0 / 252.0;

template <class T>
struct FactorParamsT {
  MatX<T> kappa;  // 3x3 mean-reversion matrix, units 1/year
  VecX<T> theta;  // 3 long-run mean
  MatX<T> sigma;  // 3x3 diffusion loading
};
using FactorParams = FactorParamsT<double>;

template <class T>
struct DiscreteTransitionT {
  MatX<T> A;
  VecX<T> D;
  MatX<T> Q;
  double dt = kTradingDt;
};
using DiscreteTransition = DiscreteTransitionT<double>;

struct ProcessNoiseResult {
  MatXd Q;
  bool quadrature_fallback = false;  // set when kappa is numerically non-diagonalizable
};

// Q via the eigendecomposition kappa = E V E^{-1}:
//   Q = E [ omega_ij f(zeta_i + zeta_j) ] E^T,  omega = E^{-1} Sigma E^{-T},
//   f(z) = (1 - e^{-z dt}) / z, or dt when |z| < 1e-8.
// Complex eigenpairs are handled in complex arithmetic and the result is
// re-symmetrized in the reals.  If the eigenvector matrix is ill conditioned
// (cond > 1e12) the routine integrates numerically instead and flags it.
ProcessNoiseResult process_noise(const FactorParams& params, double dt);

// Full discretization (A, D, Q) with Q from process_noise.
DiscreteTransition transition(const FactorParams& params, double dt);

// Euler-free exact simulation of the factor path; one row per day, row 0 is
// x0 itself.  Draws are independent per step.  Per-day parameter schedules
// use params[k] for the step k -> k+1.
MatXd simulate_path(const FactorParams& params, const VecXd& x0, int n_days, double dt,
                    std::uint64_t seed);
MatXd simulate_path(const std::vector<FactorParams>& schedule, const VecXd& x0, int n_days,
                    double dt, std::uint64_t seed);

// Matrix square root for sampling: Cholesky when positive definite, otherwise
// an eigenvalue-clipped symmetric square root.
MatXd safe_sqrt_spd(const MatXd& q);

// Differentiable discretization used inside training.  A and the noise
// integral come out of one block matrix exponential
//   exp([[ -kappa, Sigma ], [ 0, kappa^T ]] dt) = [[ A, G ], [ 0, A^{-T} ]],
// Q = G A^T (Van Loan 1978), which keeps everything on the scalar tape.
// Agrees with process_noise to roundoff; cross-checked in tests.
template <class T>
DiscreteTransitionT<T> discretize(const FactorParamsT<T>& p, double dt) {
  const int n = p.theta.size();
  MatX<T> sig = matmul(p.sigma, transpose(p.sigma));
  MatX<T> block = zeros<T>(2 * n, 2 * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      block(i, j) = p.kappa(i, j) * (-dt);
      block(i, n + j) = sig(i, j) * dt;
      block(n + i, n + j) = p.kappa(j, i) * dt;
    }
  const MatX<T> e = expm(block);
  MatX<T> a(n, n), g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      a(i, j) = e(i, j);
      g(i, j) = e(i, n + j);
    }
  DiscreteTransitionT<T> out;
  out.dt = dt;
  out.A = a;
  out.Q = symmetrize(matmul(g, transpose(a)));
  out.D = matvec(identity<T>(n) - a, p.theta);
  return out;
}

}  // namespace afcurve
