#pragma once

#include <vector>

#include "afcurve/curve.hpp"
#include "afcurve/dynamics.hpp"
#include "afcurve/linalg.hpp"

// Kalman filtering of the curve factors, linear in yield space and extended
// (first-order) in price space.  Covariance updates use the Joseph form.

namespace afcurve {

template <class T>
struct FilterStateT {
  VecX<T> mean;  // 3
  MatX<T> cov;   // 3x3, symmetric PSD
  int date_index = 0;
};
using FilterState = FilterStateT<double>;

// Diagonal or full observation noise covariance.
template <class T>
struct ObsNoiseT {
  bool is_diagonal = true;
  VecX<T> diag;
  MatX<T> full;

  static ObsNoiseT diagonal(VecX<T> d) {
    ObsNoiseT n;
    n.is_diagonal = true;
    n.diag = std::move(d);
    return n;
  }
  static ObsNoiseT dense(MatX<T> m) {
    ObsNoiseT n;
    n.is_diagonal = false;
    n.full = std::move(m);
    return n;
  }
  static ObsNoiseT iso(int m, T v) {
    VecX<T> d(m);
    for (int i = 0; i < m; ++i) d[i] = v;
    return diagonal(std::move(d));
  }

  int dim() const { return is_diagonal ? diag.size() : full.rows(); }
  T entry(int i, int j) const {
    if (is_diagonal) return i == j ? diag[i] : T(0.0);
    return full(i, j);
  }
  MatX<T> as_matrix() const {
    if (!is_diagonal) return full;
    const int m = diag.size();
    MatX<T> u = zeros<T>(m, m);
    for (int i = 0; i < m; ++i) u(i, i) = diag[i];
    return u;
  }
};
using ObsNoise = ObsNoiseT<double>;

struct KfOptions {
  bool joseph = true;             // Joseph-form covariance update
  bool outlier_guard = true;      // inflate noise on extreme innovations
  double outlier_threshold = 8.0; // standardized innovation cutoff
  double regularization = 1e-10;  // added to a singular innovation covariance
};

template <class T>
struct KfUpdateResultT {
  FilterStateT<T> posterior;
  VecX<T> innovation;  // y - prediction at the prior mean
  MatX<T> gain;        // 3 x m
  bool regularized = false;
  std::vector<int> outliers;  // indices whose noise was inflated
};
using KfUpdateResult = KfUpdateResultT<double>;

// Measurement matrix for gridded zero yields: row i = B(tau_i)/tau_i.
MatXd yield_measurement_matrix(const TenorGrid& grid, const NSParams& ns);

template <class T>
FilterStateT<T> kf_predict(const FilterStateT<T>& state, const DiscreteTransitionT<T>& tr) {
  FilterStateT<T> out;
  out.date_index = state.date_index + 1;
  out.mean = matvec(tr.A, state.mean) + tr.D;
  out.cov = symmetrize(matmul(matmul(tr.A, state.cov), transpose(tr.A)) + tr.Q);
  return out;
}

// Shared measurement update: y ~= prediction + M (x - x_prior) + noise.
// The caller supplies the innovation so the same core serves the linear and
// the linearized (extended) filters.
template <class T>
KfUpdateResultT<T> kf_update_core(const FilterStateT<T>& prior, const MatX<T>& m_mat,
                                  const VecX<T>& innovation, const ObsNoiseT<T>& noise,
                                  const KfOptions& opt) {
  const int m = innovation.size();
  if (m_mat.rows() != m || m_mat.cols() != kStateDim)
    throw std::invalid_argument("kf_update: measurement matrix shape mismatch");
  if (noise.dim() != m)
    throw std::invalid_argument("kf_update: noise dimension mismatch");

  KfUpdateResultT<T> result;
  ObsNoiseT<T> u = noise;

  const MatX<T> mp = matmul(m_mat, prior.cov);           // m x 3
  const MatX<T> mpmt = matmul(mp, transpose(m_mat));     // m x m

  // Innovations far outside the predicted spread get their measurement noise
  // inflated x100 instead of being dropped, which bounds their influence.
  if (opt.outlier_guard) {
    for (int i = 0; i < m; ++i) {
      const double f_ii = value_of(mpmt(i, i)) + value_of(u.entry(i, i));
      const double d = std::fabs(value_of(innovation[i])) / std::sqrt(std::max(f_ii, 1e-300));
      if (d > opt.outlier_threshold) {
        result.outliers.push_back(i);
        if (u.is_diagonal)
          u.diag[i] = u.diag[i] * 100.0;
        else
          u.full(i, i) = u.full(i, i) * 100.0;
      }
    }
  }

  MatX<T> f = mpmt;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) f(i, j) = f(i, j) + u.entry(i, j);

  MatX<T> l;
  try {
    l = cholesky(f);
  } catch (const SingularMatrixError&) {
    for (int i = 0; i < m; ++i) f(i, i) = f(i, i) + opt.regularization;
    result.regularized = true;
    l = cholesky(f);  // propagate if still singular
  }

  // K = P M^T F^{-1} = (F^{-1} M P)^T by symmetry of P and F.
  const MatX<T> gain = transpose(chol_solve_mat(l, mp));  // 3 x m

  FilterStateT<T> post;
  post.date_index = prior.date_index;
  post.mean = prior.mean + matvec(gain, innovation);

  if (opt.joseph) {
    MatX<T> i_km = identity<T>(kStateDim) - matmul(gain, m_mat);
    MatX<T> kuk = matmul(matmul(gain, u.as_matrix()), transpose(gain));
    post.cov = symmetrize(matmul(matmul(i_km, prior.cov), transpose(i_km)) + kuk);
  } else {
    MatX<T> i_km = identity<T>(kStateDim) - matmul(gain, m_mat);
    post.cov = symmetrize(matmul(i_km, prior.cov));
  }

  result.posterior = std::move(post);
  result.innovation = innovation;
  result.gain = gain;
  return result;
}

template <class T>
KfUpdateResultT<T> kf_update(const FilterStateT<T>& prior, const MatX<T>& m_mat,
                             const VecX<T>& y, const ObsNoiseT<T>& noise,
                             const KfOptions& opt = {}) {
  return kf_update_core(prior, m_mat, y - matvec(m_mat, prior.mean), noise, opt);
}

// Analytic derivative of panel prices with respect to the factors.
template <class T>
MatX<T> price_jacobian(const BondPanel& panel, const VecX<T>& state, const NSParams& ns) {
  return panel_jacobian(panel, state, ns);
}

template <class T>
KfUpdateResultT<T> ekf_update(const FilterStateT<T>& prior, const BondPanel& panel,
                              const ObsNoiseT<T>& noise, const NSParams& ns,
                              const KfOptions& opt = {}) {
  const int n = int(panel.bonds.size());
  const VecX<T> predicted = reprice_panel(panel, prior.mean, ns);
  VecX<T> innovation(n);
  for (int i = 0; i < n; ++i)
    innovation[i] = panel.bonds[std::size_t(i)].observed_price - predicted[i];
  const MatX<T> m_mat = price_jacobian(panel, prior.mean, ns);
  return kf_update_core(prior, m_mat, innovation, noise, opt);
}

// Mean over days of the per-day mean squared innovation (1/n_k) v_k . v_k.
template <class T>
T prediction_loss(const std::vector<VecX<T>>& innovations) {
  if (innovations.empty())
    throw std::invalid_argument("prediction_loss: no innovations");
  T total = T(0.0);
  for (const auto& v : innovations) {
    T s = T(0.0);
    for (int i = 0; i < v.size(); ++i) s = s + v[i] * v[i];
    total = total + s * (1.0 / v.size());
  }
  return total * (1.0 / double(innovations.size()));
}

}  // namespace afcurve
