#include "afcurve/dynamics.hpp"

#include <Eigen/Dense>
#include <complex>

namespace afcurve {

namespace {

Eigen::MatrixXd to_eigen(const MatXd& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

MatXd from_eigen(const Eigen::MatrixXd& e) {
  MatXd m(int(e.rows()), int(e.cols()));
  for (int i = 0; i < e.rows(); ++i)
    for (int j = 0; j < e.cols(); ++j) m(int(i), int(j)) = e(i, j);
  return m;
}

// Composite Simpson integration of exp(-kappa u) Sigma exp(-kappa^T u); the
// step exponentials are built once and chained.
MatXd quadrature_noise(const MatXd& kappa, const MatXd& sig, double dt, int intervals) {
  const int n = kappa.rows();
  const MatXd eh = expm(kappa * (-dt / (2.0 * intervals)));  // half-step
  MatXd ek = identity<double>(n);
  auto f = [&](const MatXd& e) { return matmul(matmul(e, sig), transpose(e)); };
  MatXd acc = f(ek);  // endpoint u = 0
  for (int k = 0; k < intervals; ++k) {
    ek = matmul(ek, eh);  // midpoint of interval k
    acc = acc + f(ek) * 4.0;
    ek = matmul(ek, eh);  // right endpoint
    acc = acc + f(ek) * (k + 1 == intervals ? 1.0 : 2.0);
  }
  return symmetrize(acc * (dt / (6.0 * intervals)));
}

}  // namespace

ProcessNoiseResult process_noise(const FactorParams& params, double dt) {
  const int n = params.kappa.rows();
  const MatXd sig = matmul(params.sigma, transpose(params.sigma));

  const Eigen::MatrixXd kappa_e = to_eigen(params.kappa);
  Eigen::EigenSolver<Eigen::MatrixXd> es(kappa_e);
  const Eigen::MatrixXcd evec = es.eigenvectors();
  const Eigen::VectorXcd zeta = es.eigenvalues();

  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(evec);
  const double cond = svd.singularValues()(0) / svd.singularValues()(svd.singularValues().size() - 1);
  if (!std::isfinite(cond) || cond > 1e12) {
    ProcessNoiseResult r;
    r.Q = quadrature_noise(params.kappa, sig, dt, 512);
    r.quadrature_fallback = true;
    return r;
  }

  const Eigen::MatrixXcd einv = evec.inverse();
  // omega = E^{-1} Sigma E^{-T}; plain transpose, no conjugation.
  const Eigen::MatrixXcd omega = einv * to_eigen(sig) * einv.transpose();

  Eigen::MatrixXcd integral(n, n);
  constexpr double kEps = 1e-8;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const std::complex<double> z = zeta(i) + zeta(j);
      if (std::abs(z) < kEps) {
        integral(i, j) = omega(i, j) * dt;
      } else {
        integral(i, j) = omega(i, j) * (1.0 - std::exp(-z * dt)) / z;
      }
    }
  }
  const Eigen::MatrixXcd q_c = evec * integral * evec.transpose();

  MatXd q(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) q(i, j) = q_c(i, j).real();
  ProcessNoiseResult r;
  r.Q = symmetrize(q);
  return r;
}

DiscreteTransition transition(const FactorParams& params, double dt) {
  DiscreteTransition t;
  t.dt = dt;
  t.A = expm(params.kappa * (-dt));
  t.D = matvec(identity<double>(params.kappa.rows()) - t.A, params.theta);
  t.Q = process_noise(params, dt).Q;
  return t;
}

MatXd safe_sqrt_spd(const MatXd& q) {
  try {
    return cholesky(q);
  } catch (const SingularMatrixError&) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(q));
    Eigen::VectorXd ev = es.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) ev(i) = ev(i) > 0.0 ? std::sqrt(ev(i)) : 0.0;
    return from_eigen(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
  }
}

MatXd simulate_path(const std::vector<FactorParams>& schedule, const VecXd& x0, int n_days,
                    double dt, std::uint64_t seed) {
  if (n_days < 1) throw std::invalid_argument("simulate_path: n_days must be >= 1");
  if (schedule.empty()) throw std::invalid_argument("simulate_path: empty parameter schedule");
  const int n = x0.size();
  MatXd path(n_days, n);
  for (int j = 0; j < n; ++j) path(0, j) = x0[j];

  Rng rng(seed);
  DiscreteTransition tr;
  MatXd root;
  int cached = -1;
  VecXd x = x0;
  for (int k = 0; k + 1 < n_days; ++k) {
    const int pi = std::min<int>(k, int(schedule.size()) - 1);
    if (pi != cached) {
      tr = transition(schedule[std::size_t(pi)], dt);
      root = safe_sqrt_spd(tr.Q);
      cached = pi;
    }
    VecXd noise(n);
    for (int j = 0; j < n; ++j) noise[j] = rng.normal();
    const VecXd shock = matvec(root, noise);
    x = matvec(tr.A, x) + tr.D + shock;
    for (int j = 0; j < n; ++j) path(k + 1, j) = x[j];
  }
  return path;
}

MatXd simulate_path(const FactorParams& params, const VecXd& x0, int n_days, double dt,
                    std::uint64_t seed) {
  return simulate_path(std::vector<FactorParams>{params}, x0, n_days, dt, seed);
}

}  // namespace afcurve
