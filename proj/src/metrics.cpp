#include "afcurve/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "afcurve/csv.hpp"
#include <json.hpp>

namespace afcurve {

ErrorStats error_stats(const std::vector<double>& pred, const std::vector<double>& obs) {
  if (pred.size() != obs.size())
    throw std::invalid_argument("error_stats: prediction/observation size mismatch");
  if (pred.empty()) throw std::invalid_argument("error_stats: empty input");
  ErrorStats s;
  s.n = int(pred.size());
  double sum_abs = 0.0, sum_sq = 0.0, sum_e = 0.0, sum_pct = 0.0;
  int pct_n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - obs[i];
    sum_abs += std::abs(e);
    sum_sq += e * e;
    sum_e += e;
    if (obs[i] != 0.0) {
      sum_pct += std::abs(e) / std::abs(obs[i]);
      ++pct_n;
    } else {
      ++s.mppe_skipped;
    }
  }
  const double n = double(s.n);
  s.mae = sum_abs / n;
  s.rmspe = std::sqrt(sum_sq / n);
  s.mppe = pct_n > 0 ? 100.0 * sum_pct / double(pct_n) : 0.0;
  const double mean_e = sum_e / n;
  s.stdv = std::sqrt(std::max(0.0, sum_sq / n - mean_e * mean_e));
  return s;
}

double hit_rate(const std::vector<double>& pred, const std::vector<double>& obs, double spread) {
  if (pred.size() != obs.size())
    throw std::invalid_argument("hit_rate: prediction/observation size mismatch");
  if (pred.empty()) throw std::invalid_argument("hit_rate: empty input");
  if (!(spread > 0.0)) throw std::invalid_argument("hit_rate: spread must be positive");
  int hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (std::abs(pred[i] - obs[i]) <= spread) ++hits;
  return double(hits) / double(pred.size());
}

const ReportEntry* EvalReport::find(const std::string& kind, const std::string& group,
                                    int horizon) const {
  for (const ReportEntry& e : entries)
    if (e.kind == kind && e.group == group && e.horizon == horizon) return &e;
  return nullptr;
}

namespace {

struct Series {
  std::vector<double> pred, obs;
};

std::string spread_label(double spread) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", spread);
  return buf;
}

ReportEntry make_entry(const std::string& kind, const std::string& group, int horizon,
                       const Series& s, bool with_hits) {
  ReportEntry e;
  e.kind = kind;
  e.group = group;
  e.horizon = horizon;
  e.stats = error_stats(s.pred, s.obs);
  if (with_hits)
    for (double spread : kHitSpreads) e.hit[spread_label(spread)] = hit_rate(s.pred, s.obs, spread);
  return e;
}

}  // namespace

EvalReport evaluate(const std::vector<ForecastRow>& rows, const std::string& model_name,
                    double lambda) {
  if (rows.empty()) throw std::invalid_argument("evaluate: no forecast rows");
  EvalReport report;
  report.model = model_name;
  report.lambda = lambda;

  std::set<int> horizons;
  for (const ForecastRow& r : rows) horizons.insert(r.horizon);

  for (int h : horizons) {
    // Yields: per reported maturity plus the pool, errors in basis points.
    std::map<int, Series> by_month;
    Series yield_all;
    Series price_all;
    std::map<std::string, Series> by_bucket;
    for (const ForecastRow& r : rows) {
      if (r.horizon != h) continue;
      if (r.kind == "yield") {
        const double p = r.predicted * 1e4, o = r.observed * 1e4;
        yield_all.pred.push_back(p);
        yield_all.obs.push_back(o);
        const int m = int(std::lround(r.tenor_years * 12.0));
        if (std::find(kReportMaturities.begin(), kReportMaturities.end(), m) !=
            kReportMaturities.end()) {
          by_month[m].pred.push_back(p);
          by_month[m].obs.push_back(o);
        }
      } else if (r.kind == "price") {
        price_all.pred.push_back(r.predicted);
        price_all.obs.push_back(r.observed);
        const std::string bucket =
            r.tenor_years <= 2.0 ? "0-2y" : (r.tenor_years <= 10.0 ? "2-10y" : "10-30y");
        by_bucket[bucket].pred.push_back(r.predicted);
        by_bucket[bucket].obs.push_back(r.observed);
      } else {
        throw std::invalid_argument("evaluate: unknown row kind '" + r.kind + "'");
      }
    }
    for (const auto& [m, s] : by_month)
      report.entries.push_back(make_entry("yield", std::to_string(m) + "m", h, s, false));
    if (!yield_all.pred.empty())
      report.entries.push_back(make_entry("yield", "all", h, yield_all, false));
    for (const char* bucket : {"0-2y", "2-10y", "10-30y"}) {
      auto it = by_bucket.find(bucket);
      if (it != by_bucket.end())
        report.entries.push_back(make_entry("price", bucket, h, it->second, true));
    }
    if (!price_all.pred.empty())
      report.entries.push_back(make_entry("price", "all", h, price_all, true));
  }
  return report;
}

namespace {

std::string tenor_label(double months) {
  std::ostringstream os;
  os << months << "m";
  return os.str();
}

}  // namespace

std::vector<ForecastRow> persistence_forecast(const Dataset& ds, int h, int first_origin,
                                              const NSParams& ns) {
  if (h < 1) throw std::invalid_argument("persistence_forecast: horizon must be >= 1");
  const int days = ds.days();
  if (first_origin < 0 || first_origin >= days - h)
    throw std::invalid_argument("persistence_forecast: no valid origins");

  std::vector<ForecastRow> rows;
  VecXd warm = zeros_vec<double>(kStateDim);
  for (int t = first_origin; t + h < days; ++t) {
    const int target = t + h;
    if (ds.has_yields()) {
      for (int i = 0; i < ds.grid.size(); ++i) {
        ForecastRow row;
        row.date_index = target;
        row.horizon = h;
        row.offset = t % 5;
        row.kind = "yield";
        row.key = tenor_label(ds.grid.months[std::size_t(i)]);
        row.tenor_years = ds.grid.years(i);
        row.predicted = ds.yields[std::size_t(t)].yields[i];
        row.observed = ds.yields[std::size_t(target)].yields[i];
        rows.push_back(std::move(row));
      }
    }
    if (ds.has_panels()) {
      VecXd state;
      if (ds.has_yields()) {
        state = ols_state(ds.yields[std::size_t(t)].yields, ds.grid, ns);
      } else {
        state = extract_state(ds.panels[std::size_t(t)], ns, warm).state;
        warm = state;
      }
      for (const BondQuote& q : ds.panels[std::size_t(target)].bonds) {
        ForecastRow row;
        row.date_index = target;
        row.horizon = h;
        row.offset = t % 5;
        row.kind = "price";
        row.key = q.spec.id;
        row.tenor_years = q.spec.maturity_years;
        row.predicted = price_bond(q.spec, state, ns);
        row.observed = q.observed_price;
        rows.push_back(std::move(row));
      }
    }
  }
  if (rows.empty()) throw std::invalid_argument("persistence_forecast: dataset has no series");
  return rows;
}

void write_report_json(const std::string& path, const EvalReport& report) {
  nlohmann::json j;
  j["model"] = report.model;
  j["lambda"] = report.lambda;
  j["entries"] = nlohmann::json::array();
  for (const ReportEntry& e : report.entries) {
    nlohmann::json je;
    je["kind"] = e.kind;
    je["group"] = e.group;
    je["horizon"] = e.horizon;
    je["mae"] = e.stats.mae;
    je["rmspe"] = e.stats.rmspe;
    je["mppe"] = e.stats.mppe;
    je["stdv"] = e.stats.stdv;
    je["n"] = e.stats.n;
    je["mppe_skipped"] = e.stats.mppe_skipped;
    if (!e.hit.empty()) {
      nlohmann::json jh;
      for (const auto& [label, rate] : e.hit) jh[label] = rate;
      je["hit_rate"] = jh;
    }
    j["entries"].push_back(std::move(je));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_report_json: cannot open " + path);
  out << j.dump(2) << '\n';
}

void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_report_csv: cannot open " + path);
  out << "model,lambda,kind,group,horizon,metric,value\n";
  const auto emit = [&](const ReportEntry& e, const std::string& metric, double value) {
    out << report.model << ',' << csv::fmt(report.lambda) << ',' << e.kind << ',' << e.group << ','
        << e.horizon << ',' << metric << ',' << csv::fmt(value) << '\n';
  };
  for (const ReportEntry& e : report.entries) {
    emit(e, "mae", e.stats.mae);
    emit(e, "rmspe", e.stats.rmspe);
    emit(e, "mppe", e.stats.mppe);
    emit(e, "stdv", e.stats.stdv);
    emit(e, "n", double(e.stats.n));
    emit(e, "mppe_skipped", double(e.stats.mppe_skipped));
    for (const auto& [label, rate] : e.hit) emit(e, "hit_rate_" + label, rate);
  }
}

}  // namespace afcurve
