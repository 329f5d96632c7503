#pragma once

#include <map>
#include <string>
#include <vector>

#include "afcurve/data.hpp"

namespace afcurve {

// One prediction/observation pair emitted by a forecaster. `kind` is "yield"
// (values in decimal) or "price" (dollars). `tenor_years` carries the grid
// tenor for yields and the bond maturity for prices, used for grouping.
struct ForecastRow {
  int date_index = 0;  // target day (origin + horizon)
  int horizon = 1;
  int offset = 0;  // origin day mod 5
  std::string kind;
  std::string key;  // tenor label or bond id
  double tenor_years = 0.0;
  double predicted = 0.0;
  double observed = 0.0;
};

struct ErrorStats {
  double mae = 0.0;    // mean |e|
  double rmspe = 0.0;  // sqrt(mean e^2)
  double mppe = 0.0;   // mean(|e|/|obs|) * 100, zero-obs points skipped
  double stdv = 0.0;   // population standard deviation of e
  int n = 0;
  int mppe_skipped = 0;  // points dropped from MPPE because obs == 0
};

ErrorStats error_stats(const std::vector<double>& pred, const std::vector<double>& obs);

// Fraction of pairs with |pred - obs| <= spread (inclusive).
double hit_rate(const std::vector<double>& pred, const std::vector<double>& obs, double spread);

struct ReportEntry {
  std::string kind;   // "yield" | "price"
  std::string group;  // "3m","12m",... per-maturity; "0-2y","2-10y","10-30y"; "all"
  int horizon = 1;
  ErrorStats stats;                  // yields in bp, prices in dollars
  std::map<std::string, double> hit;  // price groups only: spread label -> rate
};

struct EvalReport {
  std::string model;
  double lambda = 0.0;
  std::vector<ReportEntry> entries;

  const ReportEntry* find(const std::string& kind, const std::string& group, int horizon) const;
};

// Yield maturities reported individually (months) and price maturity buckets.
inline const std::vector<int> kReportMaturities{3, 12, 36, 60, 120, 240, 360};
inline const std::vector<double> kHitSpreads{0.10, 0.25, 0.50};

// Groups rows by kind/maturity/bucket and computes stats per group plus the
// pooled "all" group. Yield errors are converted to bp, prices stay dollars.
EvalReport evaluate(const std::vector<ForecastRow>& rows, const std::string& model_name,
                    double lambda);

// No-change benchmark: yields held fixed at day t; bonds at t+h repriced with
// the state fitted to day t's curve (yields when present, else the panel).
std::vector<ForecastRow> persistence_forecast(const Dataset& ds, int h, int first_origin,
                                              const NSParams& ns = {});

void write_report_json(const std::string& path, const EvalReport& report);
void write_report_csv(const std::string& path, const EvalReport& report);

}  // namespace afcurve
