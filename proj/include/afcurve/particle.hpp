#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "afcurve/filters.hpp"
#include "afcurve/rng.hpp"

// Sequential importance resampling over the curve factors with the
// measurement density generalized beyond the Gaussian.  The proposal runs a
// per-particle extended Kalman measurement update on the previous day's
// observation and propagates through the factor dynamics (Javaheri-style
// assisted proposal), so each particle carries its own covariance.

namespace afcurve {

template <class T>
struct MggdParamsT {
  double p = 0.62;  // shape: 1 = Gaussian, 0.5 = Laplace-like tails
  double m = 1.0;   // scale
  ObsNoiseT<T> u;   // dispersion matrix
};
using MggdParams = MggdParamsT<double>;

// Multivariate generalized Gaussian log density
//   log q(x) = log C - 1/2 log|U| - [ (x-c)^T U^{-1} (x-c) ]^p / (2 m^p),
//   C = p Gamma(n/2) / ( (2^{1/p} pi m)^{n/2} Gamma(n/(2p)) ).
template <class T>
T mggd_logpdf(const VecX<T>& x, const VecX<T>& center, const MggdParamsT<T>& mggd) {
  const int n = x.size();
  if (center.size() != n || mggd.u.dim() != n)
    throw std::invalid_argument("mggd_logpdf: dimension mismatch");
  if (!(mggd.p > 0.0) || !(mggd.m > 0.0))
    throw std::invalid_argument("mggd_logpdf: p and m must be positive");
  using std::log;
  using std::pow;

  const double log_c = std::log(mggd.p) + std::lgamma(0.5 * n) -
                       0.5 * n * std::log(std::pow(2.0, 1.0 / mggd.p) * M_PI * mggd.m) -
                       std::lgamma(0.5 * n / mggd.p);

  T log_det = T(0.0);
  T quad = T(0.0);
  if (mggd.u.is_diagonal) {
    for (int i = 0; i < n; ++i) {
      const T d = x[i] - center[i];
      log_det = log_det + log(mggd.u.diag[i]);
      quad = quad + d * d / mggd.u.diag[i];
    }
  } else {
    const MatX<T> l = cholesky(mggd.u.full);
    VecX<T> d(n);
    for (int i = 0; i < n; ++i) d[i] = x[i] - center[i];
    const VecX<T> s = chol_solve(l, d);
    for (int i = 0; i < n; ++i) {
      log_det = log_det + log(l(i, i)) * 2.0;
      quad = quad + d[i] * s[i];
    }
  }
  if (mggd.p == 1.0)
    return log_c - 0.5 * log_det - quad * (0.5 / mggd.m);
  return log_c - 0.5 * log_det - pow(quad, mggd.p) * (0.5 / std::pow(mggd.m, mggd.p));
}

// Gaussian log density N(x; mean, cov) used for transition/proposal weights.
template <class T>
T gaussian_logpdf(const VecX<T>& x, const VecX<T>& mean, const MatX<T>& cov) {
  const int n = x.size();
  MatX<T> c = cov;
  MatX<T> l;
  for (int attempt = 0;; ++attempt) {
    try {
      l = cholesky(c);
      break;
    } catch (const SingularMatrixError&) {
      if (attempt >= 3) throw;
      double tr = 0.0;
      for (int i = 0; i < n; ++i) tr += std::fabs(value_of(cov(i, i)));
      const double jitter = std::max(tr, 1e-30) * 1e-13 * std::pow(10.0, attempt);
      for (int i = 0; i < n; ++i) c(i, i) = c(i, i) + jitter;
    }
  }
  using std::log;
  VecX<T> d(n);
  for (int i = 0; i < n; ++i) d[i] = x[i] - mean[i];
  const VecX<T> s = chol_solve(l, d);
  T quad = T(0.0), log_det = T(0.0);
  for (int i = 0; i < n; ++i) {
    quad = quad + d[i] * s[i];
    log_det = log_det + log(l(i, i)) * 2.0;
  }
  return (quad + log_det) * (-0.5) - 0.5 * n * std::log(2.0 * M_PI);
}

// Measurement models the filter can weight against.
template <class T>
class LinearMeasurement {
 public:
  explicit LinearMeasurement(MatXd m) : m_(std::move(m)) {}
  int dim() const { return m_.rows(); }
  VecX<T> predict(const VecX<T>& x) const {
    VecX<T> r(m_.rows());
    for (int i = 0; i < m_.rows(); ++i) {
      T s = x[0] * m_(i, 0);
      for (int k = 1; k < m_.cols(); ++k) s = s + x[k] * m_(i, k);
      r[i] = s;
    }
    return r;
  }
  MatX<T> jacobian(const VecX<T>&) const {
    MatX<T> j(m_.rows(), m_.cols());
    for (int i = 0; i < m_.rows(); ++i)
      for (int k = 0; k < m_.cols(); ++k) j(i, k) = T(m_(i, k));
    return j;
  }

 private:
  MatXd m_;
};

template <class T>
class PanelMeasurement {
 public:
  PanelMeasurement(const BondPanel& panel, const NSParams& ns) : panel_(&panel), ns_(ns) {}
  int dim() const { return int(panel_->bonds.size()); }
  VecX<T> predict(const VecX<T>& x) const { return reprice_panel(*panel_, x, ns_); }
  MatX<T> jacobian(const VecX<T>& x) const { return panel_jacobian(*panel_, x, ns_); }

 private:
  const BondPanel* panel_;
  NSParams ns_;
};

enum class ResamplePolicy { kEveryStep, kAdaptive };

template <class T>
struct ParticleSetT {
  std::vector<VecX<T>> states;     // sampled particles X^(i)
  std::vector<MatX<T>> covs;       // per-particle proposal covariances P^(i)
  VecX<T> weights;                 // normalized
  // Measurement-updated pairs from the latest observation; the next step's
  // proposal propagates these instead of re-deriving them, so no panel has
  // to be carried across steps.
  std::vector<VecX<T>> upd_means;
  std::vector<MatX<T>> upd_covs;
  std::uint64_t seed = 0;
  int step = 0;

  int size() const { return int(states.size()); }
};
using ParticleSet = ParticleSetT<double>;

// Effective sample size 1 / sum w_i^2 of normalized weights; in [1, N].
template <class T>
double ess(const VecX<T>& weights) {
  double s = 0.0;
  for (int i = 0; i < weights.size(); ++i) {
    const double w = value_of(weights[i]);
    s += w * w;
  }
  return 1.0 / s;
}

// Systematic resampling: one uniform draw u in [0,1), thresholds
// s_i = (i + u)/N, offspring counts by inversion of the cumulative weights.
std::vector<int> systematic_resample(const std::vector<double>& weights, double u01);

// Log-space weight update with max-subtraction; returns normalized weights.
template <class T>
VecX<T> weight_step(const VecX<T>& weights, const VecX<T>& log_lik, const VecX<T>& log_trans,
                    const VecX<T>& log_prop) {
  using std::exp;
  using std::log;
  const int n = weights.size();
  VecX<T> lw(n);
  double max_lw = -1e300;
  for (int i = 0; i < n; ++i) {
    lw[i] = log(weights[i]) + log_lik[i] + log_trans[i] - log_prop[i];
    max_lw = std::max(max_lw, value_of(lw[i]));
  }
  VecX<T> w(n);
  T total = T(0.0);
  for (int i = 0; i < n; ++i) {
    w[i] = exp(lw[i] - max_lw);
    total = total + w[i];
  }
  for (int i = 0; i < n; ++i) w[i] = w[i] / total;
  return w;
}

// Particles drawn from N(prior.mean, prior.cov); uniform weights.
ParticleSet init_particles(const FilterState& prior, int n_particles, std::uint64_t seed);

// Lift a numeric particle set onto the tape (states become constants).
template <class T>
ParticleSetT<T> lift_particles(const ParticleSet& s) {
  ParticleSetT<T> out;
  out.seed = s.seed;
  out.step = s.step;
  const int n = s.size();
  out.states.reserve(n);
  out.covs.reserve(n);
  out.upd_means.reserve(n);
  out.upd_covs.reserve(n);
  auto lift_vec = [](const VecXd& v) {
    VecX<T> r(v.size());
    for (int i = 0; i < v.size(); ++i) r[i] = T(v[i]);
    return r;
  };
  auto lift_mat = [](const MatXd& m) {
    MatX<T> r(m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) r(i, j) = T(m(i, j));
    return r;
  };
  for (int i = 0; i < n; ++i) {
    out.states.push_back(lift_vec(s.states[std::size_t(i)]));
    out.covs.push_back(lift_mat(s.covs[std::size_t(i)]));
    out.upd_means.push_back(lift_vec(s.upd_means[std::size_t(i)]));
    out.upd_covs.push_back(lift_mat(s.upd_covs[std::size_t(i)]));
  }
  out.weights = lift_vec(s.weights);
  return out;
}

template <class T>
struct ProposalDraw {
  VecX<T> mean;     // g(updated mean) after propagation
  MatX<T> cov;      // propagated covariance + Q
  VecX<T> sample;   // mean + chol(cov) * xi
};

namespace detail {
template <class T>
MatX<T> chol_jittered(const MatX<T>& cov) {
  MatX<T> c = cov;
  for (int attempt = 0;; ++attempt) {
    try {
      return cholesky(c);
    } catch (const SingularMatrixError&) {
      if (attempt >= 3) throw;
      double tr = 0.0;
      for (int i = 0; i < cov.rows(); ++i) tr += std::fabs(value_of(cov(i, i)));
      const double jitter = std::max(tr, 1e-30) * 1e-13 * std::pow(10.0, attempt);
      for (int i = 0; i < cov.rows(); ++i) c(i, i) = c(i, i) + jitter;
    }
  }
}
}  // namespace detail

// Per-particle assisted proposal: measurement-update particle i on the given
// observation, then propagate through (A, D) and add Q.  The returned draw
// samples from N(g(updated mean), A P_upd A^T + Q).
template <class T, class Meas>
ProposalDraw<T> ekf_proposal(const VecX<T>& state, const MatX<T>& cov,
                             const DiscreteTransitionT<T>& tr, const Meas& meas,
                             const VecX<T>& y, const ObsNoiseT<T>& noise, Rng& rng) {
  FilterStateT<T> particle_state{state, cov, 0};
  const VecX<T> predicted = meas.predict(state);
  VecX<T> innovation(y.size());
  for (int i = 0; i < y.size(); ++i) innovation[i] = y[i] - predicted[i];
  KfOptions opt;
  opt.outlier_guard = false;
  const auto upd = kf_update_core(particle_state, meas.jacobian(state), innovation, noise, opt);

  ProposalDraw<T> draw;
  draw.mean = matvec(tr.A, upd.posterior.mean) + tr.D;
  draw.cov = symmetrize(matmul(matmul(tr.A, upd.posterior.cov), transpose(tr.A)) + tr.Q);
  const MatX<T> l = detail::chol_jittered(draw.cov);
  VecX<T> xi(kStateDim);
  for (int i = 0; i < kStateDim; ++i) xi[i] = T(rng.normal());
  draw.sample = draw.mean + matvec(l, xi);
  return draw;
}

template <class T>
struct PfStepResult {
  VecX<T> predicted;       // weight-averaged one-step-ahead measurement
  VecX<T> posterior_mean;  // weighted mean after assimilating the day
  double ess_fraction = 0.0;  // ESS/N after weighting, before any resample
  bool resampled = false;
};

// One filtering day: propose from each particle's carried measurement update,
// reweight on the new observation (measurement density x transition /
// proposal, in logs), optionally resample, then store each particle's
// measurement update for the next proposal.  Resampling indices and all
// normal draws are constants of the forward pass on the tape.
template <class T, class Meas>
PfStepResult<T> pf_step(ParticleSetT<T>& set, const DiscreteTransitionT<T>& tr,
                        const Meas& meas, const VecX<T>& y,
                        const MggdParamsT<T>& mggd, const ObsNoiseT<T>& noise,
                        ResamplePolicy policy) {
  const int n = set.size();
  const int m = y.size();
  set.step += 1;

  std::vector<VecX<T>> prev_states = std::move(set.states);
  std::vector<VecX<T>> new_states(static_cast<std::size_t>(n));
  std::vector<MatX<T>> new_covs(static_cast<std::size_t>(n));
  VecX<T> log_lik(n), log_trans(n), log_prop(n);

  // Predicted measurement before seeing y: average of per-particle
  // repricings under the incoming weights.
  VecX<T> predicted = zeros_vec<T>(m);

  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(set.seed, std::uint64_t(set.step), std::uint64_t(i)));
    ProposalDraw<T> draw;
    {
      // Proposal uses the measurement update carried from the previous step.
      FilterStateT<T> carried{set.upd_means[std::size_t(i)], set.upd_covs[std::size_t(i)], 0};
      draw.mean = matvec(tr.A, carried.mean) + tr.D;
      draw.cov = symmetrize(matmul(matmul(tr.A, carried.cov), transpose(tr.A)) + tr.Q);
      const MatX<T> l = detail::chol_jittered(draw.cov);
      VecX<T> xi(kStateDim);
      for (int k = 0; k < kStateDim; ++k) xi[k] = T(rng.normal());
      draw.sample = draw.mean + matvec(l, xi);
    }
    new_states[std::size_t(i)] = draw.sample;
    new_covs[std::size_t(i)] = draw.cov;

    const VecX<T> meas_pred = meas.predict(draw.sample);
    for (int k = 0; k < m; ++k)
      predicted[k] = predicted[k] + set.weights[i] * meas_pred[k];

    log_lik[i] = mggd_logpdf(y, meas_pred, mggd);
    const VecX<T> trans_mean = matvec(tr.A, prev_states[std::size_t(i)]) + tr.D;
    log_trans[i] = gaussian_logpdf(draw.sample, trans_mean, tr.Q);
    log_prop[i] = gaussian_logpdf(draw.sample, draw.mean, draw.cov);
  }

  set.states = std::move(new_states);
  set.covs = std::move(new_covs);
  set.weights = weight_step(set.weights, log_lik, log_trans, log_prop);

  PfStepResult<T> result;
  result.predicted = predicted;
  result.ess_fraction = ess(set.weights) / n;

  VecX<T> mean = zeros_vec<T>(kStateDim);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < kStateDim; ++k) mean[k] = mean[k] + set.weights[i] * set.states[std::size_t(i)][k];
  result.posterior_mean = mean;

  const bool do_resample = policy == ResamplePolicy::kEveryStep ||
                           (policy == ResamplePolicy::kAdaptive && result.ess_fraction < 0.5);
  if (do_resample) {
    std::vector<double> w(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) w[std::size_t(i)] = value_of(set.weights[i]);
    Rng rng(derive_seed(set.seed, std::uint64_t(set.step), 0x8e5f1dULL));
    const std::vector<int> idx = systematic_resample(w, rng.uniform());
    std::vector<VecX<T>> rs(static_cast<std::size_t>(n));
    std::vector<MatX<T>> rc(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      rs[std::size_t(i)] = set.states[std::size_t(idx[std::size_t(i)])];
      rc[std::size_t(i)] = set.covs[std::size_t(idx[std::size_t(i)])];
    }
    set.states = std::move(rs);
    set.covs = std::move(rc);
    for (int i = 0; i < n; ++i) set.weights[i] = T(1.0 / n);
    result.resampled = true;
  }

  // Measurement-update each particle on today's observation for the next
  // step's proposal.
  set.upd_means.resize(std::size_t(n));
  set.upd_covs.resize(std::size_t(n));
  KfOptions opt;
  opt.outlier_guard = false;
  for (int i = 0; i < n; ++i) {
    const VecX<T>& x = set.states[std::size_t(i)];
    FilterStateT<T> st{x, set.covs[std::size_t(i)], 0};
    const VecX<T> pred = meas.predict(x);
    VecX<T> innovation(m);
    for (int k = 0; k < m; ++k) innovation[k] = y[k] - pred[k];
    const auto upd = kf_update_core(st, meas.jacobian(x), innovation, noise, opt);
    set.upd_means[std::size_t(i)] = upd.posterior.mean;
    set.upd_covs[std::size_t(i)] = upd.posterior.cov;
  }

  return result;
}

struct EssTraceRow {
  int step = 0;
  double ess_fraction = 0.0;
  std::string split;
};

void write_ess_csv(const std::string& path, const std::vector<EssTraceRow>& rows);

}  // namespace afcurve
