#include "afcurve/particle.hpp"

#include <cstdio>

#include "afcurve/dynamics.hpp"

namespace afcurve {

std::vector<int> systematic_resample(const std::vector<double>& weights, double u01) {
  const int n = int(weights.size());
  if (n == 0) throw std::invalid_argument("systematic_resample: empty weights");
  if (!(u01 >= 0.0 && u01 < 1.0))
    throw std::invalid_argument("systematic_resample: u01 must be in [0,1)");
  std::vector<int> idx(static_cast<std::size_t>(n));
  double cum = weights[0];
  int j = 0;
  for (int i = 0; i < n; ++i) {
    const double s = (i + u01) / n;
    while (cum < s && j + 1 < n) {
      ++j;
      cum += weights[std::size_t(j)];
    }
    idx[std::size_t(i)] = j;
  }
  return idx;
}

ParticleSet init_particles(const FilterState& prior, int n_particles, std::uint64_t seed) {
  if (n_particles < 1) throw std::invalid_argument("init_particles: need at least one particle");
  ParticleSet set;
  set.seed = seed;
  set.step = 0;
  set.states.reserve(std::size_t(n_particles));
  const MatXd root = safe_sqrt_spd(prior.cov);
  Rng rng(derive_seed(seed, 0xa11cULL));
  for (int i = 0; i < n_particles; ++i) {
    VecXd xi(kStateDim);
    for (int k = 0; k < kStateDim; ++k) xi[k] = rng.normal();
    set.states.push_back(prior.mean + matvec(root, xi));
    set.covs.push_back(prior.cov);
  }
  set.upd_means = set.states;
  set.upd_covs = set.covs;
  set.weights = VecXd(n_particles);
  for (int i = 0; i < n_particles; ++i) set.weights[i] = 1.0 / n_particles;
  return set;
}

void write_ess_csv(const std::string& path, const std::vector<EssTraceRow>& rows) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("write_ess_csv: cannot open " + path);
  std::fprintf(f, "step,ess_fraction,split\n");
  for (const auto& r : rows)
    std::fprintf(f, "%d,%.17g,%s\n", r.step, r.ess_fraction, r.split.c_str());
  std::fclose(f);
}

}  // namespace afcurve
