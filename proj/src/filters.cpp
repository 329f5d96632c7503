#include "afcurve/filters.hpp"

namespace afcurve {

MatXd yield_measurement_matrix(const TenorGrid& grid, const NSParams& ns) {
  MatXd m(grid.size(), kStateDim);
  for (int i = 0; i < grid.size(); ++i) {
    const auto w = yield_loadings(grid.years(i), ns);
    for (int k = 0; k < kStateDim; ++k) m(i, k) = w[k];
  }
  return m;
}

}  // namespace afcurve
