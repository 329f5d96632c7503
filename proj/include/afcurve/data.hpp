#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "afcurve/curve.hpp"
#include "afcurve/dynamics.hpp"
#include "afcurve/linalg.hpp"
#include "afcurve/rng.hpp"

namespace afcurve {

// CSV schema violation; collects offending line numbers (first few) so the
// message pinpoints bad rows instead of failing opaquely.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, const std::vector<std::pair<int, std::string>>& issues);
};

struct SyntheticConfig {
  int days = 750;
  double dt = kTradingDt;
  FactorParams params;  // true dynamics
  // Optional piecewise-constant regime changes: (start_day, params), sorted.
  std::vector<std::pair<int, FactorParams>> schedule;
  double yield_noise_sd = 4e-4;  // decimal, i.e. 4 bp
  double price_noise_sd = 0.05;  // dollars per 100 face
  std::array<int, 3> bucket_sizes{14, 45, 9};  // short/mid/long bonds per day
  VecXd x0;                                    // start state; empty -> theta
  std::uint64_t seed = 42;
  TenorGrid grid = TenorGrid::standard23();
  NSParams ns{};
  bool with_bonds = true;

  // Moderate mean reversion (half-lives of weeks) with mild factor coupling;
  // factor means at historically plausible level/slope/curvature values.
  static SyntheticConfig defaults();
  // Near-unit-root variant (half-lives of months to years), where the factor
  // path wanders and the long-run mean is barely identified in sample.
  static SyntheticConfig slow_reversion();
  // Strong mean reversion (half-lives of a few days); a stress regime where
  // most of the forecastable signal decays within a week.
  static SyntheticConfig fast_reversion();
};

struct Dataset {
  std::vector<YieldCurve> yields;  // one per day; may be empty
  std::vector<BondPanel> panels;   // one per day; may be empty
  MatXd truth;                     // days x 3 true states when known
  bool has_truth = false;
  TenorGrid grid = TenorGrid::standard23();

  int days() const {
    return yields.empty() ? int(panels.size()) : int(yields.size());
  }
  bool has_yields() const { return !yields.empty(); }
  bool has_panels() const { return !panels.empty(); }
};

Dataset generate_synthetic(const SyntheticConfig& cfg);

// Deterministic stratified sample over the 0-2y / 2-10y / 10-30y maturity
// buckets. Throws when a bucket population is smaller than its quota.
std::vector<BondSpec> bucket_sample(const std::vector<BondSpec>& universe,
                                    const std::array<int, 3>& sizes, std::uint64_t seed);

// yields.csv: header `date_index,tenor_months_1,...,tenor_months_23`,
// values in percent on disk, decimal in memory. Also accepts the tabular
// variant whose first column is a date string (rows become 0-based indices).
Dataset load_yield_csv(const std::string& path);
void save_yield_csv(const std::string& path, const Dataset& ds);

// bonds.csv: date_index,bond_id,price,coupon_rate_pct,frequency_per_year,maturity_years
Dataset load_bond_csv(const std::string& path);
void save_bond_csv(const std::string& path, const Dataset& ds);

// truth.csv: date_index,x1,x2,x3
void load_truth_csv(const std::string& path, Dataset& ds);
void save_truth_csv(const std::string& path, const Dataset& ds);

// Reads yields.csv / bonds.csv / truth.csv from a directory (whichever exist)
// into one dataset. Throws if none are present.
Dataset load_dataset(const std::string& dir);
void save_dataset(const std::string& dir, const Dataset& ds);

}  // namespace afcurve
