#include "afcurve/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "afcurve/csv.hpp"

namespace afcurve {

namespace {

std::string parse_error_message(const std::string& path,
                                const std::vector<std::pair<int, std::string>>& issues) {
  std::ostringstream os;
  os << path << ": " << issues.size() << " schema violation(s)";
  int shown = 0;
  for (const auto& [line, msg] : issues) {
    if (shown == 10) {
      os << "; ...";
      break;
    }
    os << "; line " << line << ": " << msg;
    ++shown;
  }
  return os.str();
}

MatXd diag3(double a, double b, double c) {
  MatXd m = zeros<double>(kStateDim, kStateDim);
  m(0, 0) = a;
  m(1, 1) = b;
  m(2, 2) = c;
  return m;
}

}  // namespace

ParseError::ParseError(const std::string& path,
                       const std::vector<std::pair<int, std::string>>& issues)
    : std::runtime_error(parse_error_message(path, issues)) {}

SyntheticConfig SyntheticConfig::defaults() {
  SyntheticConfig c;
  c.params.kappa = diag3(4.0, 6.0, 8.0);
  c.params.kappa(0, 1) = 0.3;
  c.params.kappa(1, 0) = 0.25;
  c.params.kappa(1, 2) = 0.5;
  c.params.kappa(2, 1) = 0.4;
  c.params.theta = VecXd{0.0312, -0.0098, -0.0163};
  c.params.sigma = diag3(0.003, 0.003, 0.003);
  return c;
}

SyntheticConfig SyntheticConfig::slow_reversion() {
  SyntheticConfig c = defaults();
  c.params.kappa = diag3(0.5, 1.0, 1.5);
  c.params.kappa(0, 1) = 0.05;
  c.params.kappa(1, 0) = 0.04;
  c.params.kappa(1, 2) = 0.08;
  c.params.kappa(2, 1) = 0.06;
  return c;
}

SyntheticConfig SyntheticConfig::fast_reversion() {
  SyntheticConfig c = defaults();
  c.params.kappa = diag3(35.0, 45.0, 55.0);
  c.params.kappa(0, 1) = 3.0;
  c.params.kappa(1, 0) = 2.0;
  c.params.kappa(1, 2) = 4.0;
  c.params.kappa(2, 1) = 3.0;
  c.params.sigma = diag3(0.005, 0.005, 0.005);
  return c;
}

std::vector<BondSpec> bucket_sample(const std::vector<BondSpec>& universe,
                                    const std::array<int, 3>& sizes, std::uint64_t seed) {
  static const char* kNames[3] = {"short (0-2y)", "mid (2-10y)", "long (10-30y)"};
  std::array<std::vector<int>, 3> pools;
  for (int i = 0; i < int(universe.size()); ++i) {
    const double m = universe[std::size_t(i)].maturity_years;
    const int b = m <= 2.0 ? 0 : (m <= 10.0 ? 1 : 2);
    pools[std::size_t(b)].push_back(i);
  }
  Rng rng(derive_seed(seed, 0xb5a7ULL));
  std::vector<int> chosen;
  for (int b = 0; b < 3; ++b) {
    auto& pool = pools[std::size_t(b)];
    const int want = sizes[std::size_t(b)];
    if (int(pool.size()) < want)
      throw std::invalid_argument("bucket_sample: bucket " + std::string(kNames[b]) + " has " +
                                  std::to_string(pool.size()) + " bonds, need " +
                                  std::to_string(want));
    // Partial Fisher-Yates: the first `want` entries are a uniform sample.
    for (int i = 0; i < want; ++i) {
      const int j = int(rng.uniform_int(std::uint64_t(i), std::uint64_t(pool.size() - 1)));
      std::swap(pool[std::size_t(i)], pool[std::size_t(j)]);
    }
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + want);
  }
  std::vector<BondSpec> out;
  out.reserve(chosen.size());
  for (int i : chosen) out.push_back(universe[std::size_t(i)]);
  std::sort(out.begin(), out.end(), [](const BondSpec& a, const BondSpec& b) {
    return a.maturity_years != b.maturity_years ? a.maturity_years < b.maturity_years
                                                : a.id < b.id;
  });
  return out;
}

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.days < 2) throw std::invalid_argument("generate_synthetic: need at least two days");
  if (cfg.yield_noise_sd < 0.0 || cfg.price_noise_sd < 0.0)
    throw std::invalid_argument("generate_synthetic: noise sd must be >= 0");
  for (int b : cfg.bucket_sizes)
    if (b <= 0) throw std::invalid_argument("generate_synthetic: bucket sizes must be positive");

  const VecXd x0 = cfg.x0.size() == kStateDim ? cfg.x0 : cfg.params.theta;
  MatXd path;
  if (cfg.schedule.empty()) {
    path = simulate_path(cfg.params, x0, cfg.days, cfg.dt, derive_seed(cfg.seed, 0x717aULL));
  } else {
    std::vector<FactorParams> sched;
    sched.reserve(std::size_t(cfg.days));
    FactorParams cur = cfg.params;
    std::size_t si = 0;
    for (int k = 0; k < cfg.days; ++k) {
      while (si < cfg.schedule.size() && cfg.schedule[si].first <= k) cur = cfg.schedule[si++].second;
      sched.push_back(cur);
    }
    path = simulate_path(sched, x0, cfg.days, cfg.dt, derive_seed(cfg.seed, 0x717aULL));
  }

  Dataset ds;
  ds.grid = cfg.grid;
  ds.truth = path;
  ds.has_truth = true;

  Rng yield_rng(derive_seed(cfg.seed, 0x9e1dULL));
  for (int t = 0; t < cfg.days; ++t) {
    VecXd x(kStateDim);
    for (int k = 0; k < kStateDim; ++k) x[k] = path(t, k);
    YieldCurve yc;
    yc.date_index = t;
    yc.yields = VecXd(cfg.grid.size());
    for (int i = 0; i < cfg.grid.size(); ++i)
      yc.yields[i] = yield_at(x, cfg.grid.years(i), cfg.ns) + cfg.yield_noise_sd * yield_rng.normal();
    ds.yields.push_back(std::move(yc));
  }

  if (cfg.with_bonds) {
    Rng bond_rng(derive_seed(cfg.seed, 0xb0a4ULL));
    Rng price_rng(derive_seed(cfg.seed, 0x9c1eULL));
    for (int t = 0; t < cfg.days; ++t) {
      // Fresh universe each day, half again larger than the panel so the
      // stratified sampler has slack, then priced off the true state.
      std::vector<BondSpec> universe;
      const double lo[3] = {0.26, 2.01, 10.01};
      const double hi[3] = {2.0, 10.0, 29.9};
      int serial = 0;
      for (int b = 0; b < 3; ++b) {
        const int n = cfg.bucket_sizes[std::size_t(b)] + (cfg.bucket_sizes[std::size_t(b)] + 1) / 2;
        for (int i = 0; i < n; ++i) {
          const double maturity = bond_rng.uniform(lo[b], hi[b]);
          const double coupon = bond_rng.uniform(1.0, 5.0);
          universe.push_back(BondSpec::make("d" + std::to_string(t) + "_b" + std::to_string(serial++),
                                            coupon, 2, maturity));
        }
      }
      const std::vector<BondSpec> picked =
          bucket_sample(universe, cfg.bucket_sizes, derive_seed(cfg.seed, 0x5e1eULL, std::uint64_t(t)));
      VecXd x(kStateDim);
      for (int k = 0; k < kStateDim; ++k) x[k] = path(t, k);
      BondPanel panel;
      panel.date_index = t;
      panel.bonds.reserve(picked.size());
      for (const BondSpec& spec : picked) {
        BondQuote q;
        q.spec = spec;
        q.observed_price = price_bond(spec, x, cfg.ns) + cfg.price_noise_sd * price_rng.normal();
        panel.bonds.push_back(std::move(q));
      }
      ds.panels.push_back(std::move(panel));
    }
  }
  return ds;
}

// --- yields.csv --------------------------------------------------------------------

namespace {

std::string native_yield_header(int tenors) {
  std::string h = "date_index";
  for (int i = 1; i <= tenors; ++i) h += ",tenor_months_" + std::to_string(i);
  return h;
}

}  // namespace

void save_yield_csv(const std::string& path, const Dataset& ds) {
  if (!ds.has_yields()) throw std::invalid_argument("save_yield_csv: dataset has no yields");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_yield_csv: cannot open " + path);
  out << native_yield_header(ds.grid.size()) << '\n';
  for (const YieldCurve& yc : ds.yields) {
    out << yc.date_index;
    for (int i = 0; i < yc.yields.size(); ++i) out << ',' << csv::fmt(yc.yields[i] * 100.0);
    out << '\n';
  }
}

Dataset load_yield_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_yield_csv: cannot open " + path);
  Dataset ds;
  ds.grid = TenorGrid::standard23();
  const int tenors = ds.grid.size();

  std::string line;
  if (!std::getline(in, line))
    throw ParseError(path, {{1, "empty file"}});
  const bool native = csv::trim(line) == native_yield_header(tenors);
  if (!native) {
    const auto cols = csv::split_line(line);
    if (int(cols.size()) != tenors + 1)
      throw ParseError(path, {{1, "expected " + std::to_string(tenors + 1) + " columns, got " +
                                       std::to_string(cols.size())}});
  }

  std::vector<std::pair<int, std::string>> issues;
  int line_no = 1;
  int row_no = 0;
  long long prev_date = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split_line(line);
    if (int(f.size()) != tenors + 1) {
      issues.emplace_back(line_no, "expected " + std::to_string(tenors + 1) + " fields, got " +
                                       std::to_string(f.size()));
      continue;
    }
    YieldCurve yc;
    if (native) {
      long long d = 0;
      if (!csv::parse_int(f[0], d)) {
        issues.emplace_back(line_no, "bad date_index '" + f[0] + "'");
        continue;
      }
      if (row_no > 0 && d != prev_date + 1) {
        issues.emplace_back(line_no, "date_index " + std::to_string(d) +
                                         " not contiguous after " + std::to_string(prev_date));
        continue;
      }
      prev_date = d;
      yc.date_index = int(d);
    } else {
      if (csv::trim(f[0]).empty()) {
        issues.emplace_back(line_no, "empty date field");
        continue;
      }
      yc.date_index = row_no;
    }
    yc.yields = VecXd(tenors);
    bool ok = true;
    for (int i = 0; i < tenors; ++i) {
      double pct = 0.0;
      if (!csv::parse_double(f[std::size_t(i + 1)], pct) || !std::isfinite(pct)) {
        issues.emplace_back(line_no, "bad yield in column " + std::to_string(i + 2));
        ok = false;
        break;
      }
      yc.yields[i] = pct / 100.0;
    }
    if (!ok) continue;
    ds.yields.push_back(std::move(yc));
    ++row_no;
  }
  if (!issues.empty()) throw ParseError(path, issues);
  if (ds.yields.empty()) throw ParseError(path, {{line_no, "no data rows"}});
  return ds;
}

// --- bonds.csv ---------------------------------------------------------------------

void save_bond_csv(const std::string& path, const Dataset& ds) {
  if (!ds.has_panels()) throw std::invalid_argument("save_bond_csv: dataset has no panels");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_bond_csv: cannot open " + path);
  out << "date_index,bond_id,price,coupon_rate_pct,frequency_per_year,maturity_years\n";
  for (const BondPanel& panel : ds.panels)
    for (const BondQuote& b : panel.bonds)
      out << panel.date_index << ',' << b.spec.id << ',' << csv::fmt(b.observed_price) << ','
          << csv::fmt(b.spec.coupon_rate) << ',' << b.spec.frequency << ','
          << csv::fmt(b.spec.maturity_years) << '\n';
}

Dataset load_bond_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_bond_csv: cannot open " + path);
  Dataset ds;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path, {{1, "empty file"}});
  if (csv::trim(line) != "date_index,bond_id,price,coupon_rate_pct,frequency_per_year,maturity_years")
    throw ParseError(path, {{1, "unexpected header"}});

  std::vector<std::pair<int, std::string>> issues;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split_line(line);
    if (f.size() != 6) {
      issues.emplace_back(line_no, "expected 6 fields, got " + std::to_string(f.size()));
      continue;
    }
    long long d = 0, freq = 0;
    double price = 0.0, coupon = 0.0, maturity = 0.0;
    if (!csv::parse_int(f[0], d)) {
      issues.emplace_back(line_no, "bad date_index '" + f[0] + "'");
      continue;
    }
    const std::string id = csv::trim(f[1]);
    if (id.empty()) {
      issues.emplace_back(line_no, "empty bond_id");
      continue;
    }
    if (!csv::parse_double(f[2], price) || !std::isfinite(price) || price <= 0.0) {
      issues.emplace_back(line_no, "bad price '" + f[2] + "'");
      continue;
    }
    if (!csv::parse_double(f[3], coupon) || !std::isfinite(coupon) || coupon < 0.0) {
      issues.emplace_back(line_no, "bad coupon '" + f[3] + "'");
      continue;
    }
    if (!csv::parse_int(f[4], freq) || freq < 1 || freq > 12) {
      issues.emplace_back(line_no, "bad frequency '" + f[4] + "'");
      continue;
    }
    if (!csv::parse_double(f[5], maturity) || !(maturity > 0.0)) {
      issues.emplace_back(line_no, "bad maturity '" + f[5] + "'");
      continue;
    }
    if (ds.panels.empty() || ds.panels.back().date_index != int(d)) {
      if (!ds.panels.empty() && int(d) != ds.panels.back().date_index + 1) {
        issues.emplace_back(line_no, "date_index " + std::to_string(d) + " not contiguous after " +
                                         std::to_string(ds.panels.back().date_index));
        continue;
      }
      BondPanel p;
      p.date_index = int(d);
      ds.panels.push_back(std::move(p));
    }
    BondQuote q;
    q.spec = BondSpec::make(id, coupon, int(freq), maturity);
    q.observed_price = price;
    ds.panels.back().bonds.push_back(std::move(q));
  }
  if (!issues.empty()) throw ParseError(path, issues);
  if (ds.panels.empty()) throw ParseError(path, {{line_no, "no data rows"}});
  for (BondPanel& p : ds.panels)
    std::sort(p.bonds.begin(), p.bonds.end(), [](const BondQuote& a, const BondQuote& b) {
      return a.spec.maturity_years != b.spec.maturity_years
                 ? a.spec.maturity_years < b.spec.maturity_years
                 : a.spec.id < b.spec.id;
    });
  return ds;
}

// --- truth.csv ---------------------------------------------------------------------

void save_truth_csv(const std::string& path, const Dataset& ds) {
  if (!ds.has_truth) throw std::invalid_argument("save_truth_csv: dataset has no true states");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_truth_csv: cannot open " + path);
  out << "date_index,x1,x2,x3\n";
  for (int t = 0; t < ds.truth.rows(); ++t) {
    out << t;
    for (int k = 0; k < kStateDim; ++k) out << ',' << csv::fmt(ds.truth(t, k));
    out << '\n';
  }
}

void load_truth_csv(const std::string& path, Dataset& ds) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_truth_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path, {{1, "empty file"}});
  if (csv::trim(line) != "date_index,x1,x2,x3")
    throw ParseError(path, {{1, "unexpected header"}});
  std::vector<std::array<double, 3>> rows;
  std::vector<std::pair<int, std::string>> issues;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split_line(line);
    long long d = 0;
    std::array<double, 3> x{};
    if (f.size() != 4 || !csv::parse_int(f[0], d) || !csv::parse_double(f[1], x[0]) ||
        !csv::parse_double(f[2], x[1]) || !csv::parse_double(f[3], x[2])) {
      issues.emplace_back(line_no, "bad row");
      continue;
    }
    rows.push_back(x);
  }
  if (!issues.empty()) throw ParseError(path, issues);
  ds.truth = MatXd(int(rows.size()), kStateDim);
  for (int t = 0; t < int(rows.size()); ++t)
    for (int k = 0; k < kStateDim; ++k) ds.truth(t, k) = rows[std::size_t(t)][std::size_t(k)];
  ds.has_truth = ds.truth.rows() > 0;
}

// --- directories -------------------------------------------------------------------

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path base(dir);
  Dataset ds;
  bool any = false;
  if (fs::exists(base / "yields.csv")) {
    ds = load_yield_csv((base / "yields.csv").string());
    any = true;
  }
  if (fs::exists(base / "bonds.csv")) {
    Dataset bonds = load_bond_csv((base / "bonds.csv").string());
    if (any && bonds.panels.size() != ds.yields.size())
      throw std::runtime_error("load_dataset: yields.csv and bonds.csv cover different day counts");
    ds.panels = std::move(bonds.panels);
    any = true;
  }
  if (!any) throw std::runtime_error("load_dataset: no yields.csv or bonds.csv in " + dir);
  if (fs::exists(base / "truth.csv")) {
    load_truth_csv((base / "truth.csv").string(), ds);
    if (ds.truth.rows() != ds.days())
      throw std::runtime_error("load_dataset: truth.csv day count does not match the data");
  }
  return ds;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  const fs::path base(dir);
  fs::create_directories(base);
  if (ds.has_yields()) save_yield_csv((base / "yields.csv").string(), ds);
  if (ds.has_panels()) save_bond_csv((base / "bonds.csv").string(), ds);
  if (ds.has_truth) save_truth_csv((base / "truth.csv").string(), ds);
}

}  // namespace afcurve
