#include "afcurve/arbitrage.hpp"

#include <cstdio>
#include <stdexcept>

namespace afcurve {

std::vector<AerReportRow> aer_report(const std::vector<VecXd>& states,
                                     const std::vector<FactorParams>& params,
                                     const AerConfig& cfg, const NSParams& ns,
                                     const std::string& split) {
  if (states.size() != params.size())
    throw std::invalid_argument("aer_report: states/params length mismatch");
  const int n = int(states.size());
  std::vector<AerReportRow> rows;
  rows.reserve(cfg.grid_months.size());
  std::vector<double> vals(static_cast<std::size_t>(n)), abs_vals(static_cast<std::size_t>(n));
  for (double tenor : cfg.grid_months) {
    for (int i = 0; i < n; ++i) {
      const double lam = lambda_excess(states[std::size_t(i)], params[std::size_t(i)],
                                       tenor / 12.0, ns);
      vals[std::size_t(i)] = lam;
      abs_vals[std::size_t(i)] = std::fabs(lam);
    }
    AerReportRow row;
    row.tenor_months = tenor;
    row.mean_aer = pairwise_sum(vals) / n;
    row.mean_abs_aer = pairwise_sum(abs_vals) / n;
    row.split = split;
    rows.push_back(row);
  }
  return rows;
}

void write_aer_csv(const std::string& path, const std::vector<AerReportRow>& rows) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("write_aer_csv: cannot open " + path);
  std::fprintf(f, "tenor_months,mean_aer,mean_abs_aer,split\n");
  for (const auto& r : rows)
    std::fprintf(f, "%.17g,%.17g,%.17g,%s\n", r.tenor_months, r.mean_aer, r.mean_abs_aer,
                 r.split.c_str());
  std::fclose(f);
}

}  // namespace afcurve
