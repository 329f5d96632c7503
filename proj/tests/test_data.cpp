#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "afcurve/data.hpp"

using namespace afcurve;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string native_header() {
  std::string h = "date_index";
  for (int i = 1; i <= 23; ++i) h += ",tenor_months_" + std::to_string(i);
  return h;
}

std::string row_of(const std::string& first, double pct) {
  std::string r = first;
  for (int i = 0; i < 23; ++i) r += "," + std::to_string(pct);
  return r;
}

}  // namespace

TEST_CASE("synthetic generator produces a complete, aligned sample") {
  SyntheticConfig cfg = SyntheticConfig::defaults();
  cfg.days = 12;
  cfg.seed = 11;
  const Dataset ds = generate_synthetic(cfg);

  CHECK(ds.days() == 12);
  REQUIRE(int(ds.yields.size()) == 12);
  REQUIRE(int(ds.panels.size()) == 12);
  CHECK(ds.has_truth);
  CHECK(ds.truth.rows() == 12);
  CHECK(ds.grid.size() == 23);
  for (int t = 0; t < 12; ++t) {
    CHECK(ds.yields[std::size_t(t)].date_index == t);
    CHECK(ds.yields[std::size_t(t)].yields.size() == 23);
    CHECK(ds.panels[std::size_t(t)].date_index == t);
    CHECK(int(ds.panels[std::size_t(t)].bonds.size()) == 14 + 45 + 9);
  }
  // Paths start at the long-run mean when no explicit start state is given.
  for (int k = 0; k < 3; ++k) CHECK(ds.truth(0, k) == cfg.params.theta[k]);

  // Deterministic in the seed, sensitive to it.
  const Dataset again = generate_synthetic(cfg);
  CHECK(max_abs_diff(again.truth, ds.truth) == 0.0);
  CHECK(max_abs_diff(again.yields[5].yields, ds.yields[5].yields) == 0.0);
  CHECK(again.panels[3].bonds[7].observed_price == ds.panels[3].bonds[7].observed_price);
  cfg.seed = 12;
  const Dataset other = generate_synthetic(cfg);
  CHECK(max_abs_diff(other.truth, ds.truth) > 0.0);

  cfg.days = 1;
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
  cfg.days = 12;
  cfg.yield_noise_sd = -1.0;
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
}

TEST_CASE("noiseless observations sit exactly on the model curve") {
  SyntheticConfig cfg = SyntheticConfig::defaults();
  cfg.days = 5;
  cfg.seed = 3;
  cfg.yield_noise_sd = 0.0;
  cfg.price_noise_sd = 0.0;
  cfg.bucket_sizes = {3, 4, 2};
  const Dataset ds = generate_synthetic(cfg);

  for (int t = 0; t < 5; ++t) {
    VecXd x(3);
    for (int k = 0; k < 3; ++k) x[k] = ds.truth(t, k);
    for (int i = 0; i < ds.grid.size(); ++i)
      CHECK(ds.yields[std::size_t(t)].yields[i] == yield_at(x, ds.grid.years(i), cfg.ns));
    for (const BondQuote& q : ds.panels[std::size_t(t)].bonds)
      CHECK(q.observed_price == price_bond(q.spec, x, cfg.ns));
  }
}

TEST_CASE("stratified sampler respects maturity-bucket quotas") {
  std::vector<BondSpec> universe;
  const double maturities[] = {0.5, 1.0, 1.5, 3.0, 5.0, 7.0, 9.0, 12.0, 20.0, 29.0};
  int n = 0;
  for (double m : maturities) universe.push_back(BondSpec::make("b" + std::to_string(n++), 3.0, 2, m));

  const std::array<int, 3> sizes{2, 3, 2};
  const std::vector<BondSpec> picked = bucket_sample(universe, sizes, 99);
  REQUIRE(int(picked.size()) == 7);
  int counts[3] = {0, 0, 0};
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const double m = picked[i].maturity_years;
    counts[m <= 2.0 ? 0 : (m <= 10.0 ? 1 : 2)] += 1;
    if (i > 0) CHECK(picked[i - 1].maturity_years <= m);  // sorted output
  }
  CHECK(counts[0] == 2);
  CHECK(counts[1] == 3);
  CHECK(counts[2] == 2);

  const std::vector<BondSpec> same = bucket_sample(universe, sizes, 99);
  REQUIRE(same.size() == picked.size());
  for (std::size_t i = 0; i < same.size(); ++i) CHECK(same[i].id == picked[i].id);

  // Short bucket only has three candidates.
  CHECK_THROWS_AS(bucket_sample(universe, {4, 3, 2}, 99), std::invalid_argument);
}

TEST_CASE("yield CSV stores percent and round-trips to working precision") {
  const fs::path dir = fresh_dir("afcurve_test_yields");
  SyntheticConfig cfg = SyntheticConfig::defaults();
  cfg.days = 6;
  cfg.with_bonds = false;
  cfg.seed = 21;
  const Dataset ds = generate_synthetic(cfg);

  const std::string path = (dir / "yields.csv").string();
  save_yield_csv(path, ds);

  // On-disk values are 100x the in-memory decimals.
  {
    std::ifstream in(path);
    std::string header, first;
    std::getline(in, header);
    CHECK(header == native_header());
    std::getline(in, first);
    const double mem = ds.yields[0].yields[0];
    // First data cell parses back to exactly mem * 100.
    const std::size_t c1 = first.find(',');
    const std::size_t c2 = first.find(',', c1 + 1);
    const double disk = std::stod(first.substr(c1 + 1, c2 - c1 - 1));
    CHECK(disk == mem * 100.0);
  }

  const Dataset back = load_yield_csv(path);
  REQUIRE(back.days() == 6);
  for (int t = 0; t < 6; ++t) {
    CHECK(back.yields[std::size_t(t)].date_index == t);
    CHECK(max_abs_diff(back.yields[std::size_t(t)].yields, ds.yields[std::size_t(t)].yields) < 1e-15);
  }
  fs::remove_all(dir);
}

TEST_CASE("bond and truth CSVs round-trip exactly") {
  const fs::path dir = fresh_dir("afcurve_test_bonds");
  SyntheticConfig cfg = SyntheticConfig::defaults();
  cfg.days = 4;
  cfg.seed = 22;
  cfg.bucket_sizes = {3, 4, 2};
  const Dataset ds = generate_synthetic(cfg);

  const std::string bpath = (dir / "bonds.csv").string();
  save_bond_csv(bpath, ds);
  const Dataset bback = load_bond_csv(bpath);
  REQUIRE(int(bback.panels.size()) == 4);
  for (int t = 0; t < 4; ++t) {
    const BondPanel& a = ds.panels[std::size_t(t)];
    const BondPanel& b = bback.panels[std::size_t(t)];
    CHECK(b.date_index == a.date_index);
    REQUIRE(b.bonds.size() == a.bonds.size());
    for (std::size_t j = 0; j < a.bonds.size(); ++j) {
      CHECK(b.bonds[j].spec.id == a.bonds[j].spec.id);
      CHECK(b.bonds[j].observed_price == a.bonds[j].observed_price);
      CHECK(b.bonds[j].spec.coupon_rate == a.bonds[j].spec.coupon_rate);
      CHECK(b.bonds[j].spec.frequency == a.bonds[j].spec.frequency);
      CHECK(b.bonds[j].spec.maturity_years == a.bonds[j].spec.maturity_years);
      CHECK(b.bonds[j].spec.cash_flows.size() == a.bonds[j].spec.cash_flows.size());
    }
  }

  const std::string tpath = (dir / "truth.csv").string();
  save_truth_csv(tpath, ds);
  Dataset tback;
  load_truth_csv(tpath, tback);
  CHECK(tback.has_truth);
  REQUIRE(tback.truth.rows() == 4);
  CHECK(max_abs_diff(tback.truth, ds.truth) == 0.0);
  fs::remove_all(dir);
}

TEST_CASE("dataset directories reassemble every present table") {
  const fs::path dir = fresh_dir("afcurve_test_dataset");
  SyntheticConfig cfg = SyntheticConfig::defaults();
  cfg.days = 5;
  cfg.seed = 23;
  cfg.bucket_sizes = {2, 3, 1};
  const Dataset ds = generate_synthetic(cfg);

  save_dataset(dir.string(), ds);
  CHECK(fs::exists(dir / "yields.csv"));
  CHECK(fs::exists(dir / "bonds.csv"));
  CHECK(fs::exists(dir / "truth.csv"));

  const Dataset back = load_dataset(dir.string());
  CHECK(back.days() == 5);
  CHECK(back.has_yields());
  CHECK(back.has_panels());
  CHECK(back.has_truth);
  CHECK(max_abs_diff(back.truth, ds.truth) == 0.0);
  for (int t = 0; t < 5; ++t)
    CHECK(max_abs_diff(back.yields[std::size_t(t)].yields, ds.yields[std::size_t(t)].yields) < 1e-15);

  const fs::path empty = fresh_dir("afcurve_test_empty");
  CHECK_THROWS_AS(load_dataset(empty.string()), std::runtime_error);
  fs::remove_all(dir);
  fs::remove_all(empty);
}

TEST_CASE("hand-written percent rows load as decimal yields") {
  const fs::path dir = fresh_dir("afcurve_test_percent");
  const std::string path = (dir / "yields.csv").string();
  {
    std::ofstream out(path);
    out << native_header() << '\n';
    out << row_of("0", 0.735) << '\n';
    out << row_of("1", 4.25) << '\n';
  }
  const Dataset ds = load_yield_csv(path);
  REQUIRE(ds.days() == 2);
  CHECK(ds.yields[0].yields[2] == 0.735 / 100.0);
  CHECK(ds.yields[1].yields[22] == 4.25 / 100.0);
  fs::remove_all(dir);
}

TEST_CASE("tabular files keyed by date string get row-order indices") {
  const fs::path dir = fresh_dir("afcurve_test_tabular");
  const std::string path = (dir / "rates.csv").string();
  {
    std::ofstream out(path);
    out << "Date";
    for (int i = 1; i <= 23; ++i) out << ",col" << i;
    out << '\n';
    out << row_of("1993-01-29", 3.1) << '\n';
    out << row_of("1993-02-01", 3.2) << '\n';
    out << row_of("1993-02-02", 3.3) << '\n';
  }
  const Dataset ds = load_yield_csv(path);
  REQUIRE(ds.days() == 3);
  CHECK(ds.yields[0].date_index == 0);
  CHECK(ds.yields[2].date_index == 2);
  CHECK(ds.yields[1].yields[0] == 3.2 / 100.0);
  fs::remove_all(dir);
}

TEST_CASE("schema violations report the offending line") {
  const fs::path dir = fresh_dir("afcurve_test_badcsv");
  const std::string path = (dir / "yields.csv").string();
  {
    std::ofstream out(path);
    out << native_header() << '\n';
    out << row_of("0", 3.0) << '\n';  // line 2: fine
    std::string bad = row_of("1", 3.0);
    bad.replace(bad.find("3.0"), 3, "abc");  // line 3: non-numeric yield
    out << bad << '\n';
  }
  bool threw = false;
  try {
    load_yield_csv(path);
  } catch (const ParseError& e) {
    threw = true;
    const std::string msg = e.what();
    CHECK(msg.find("line 3") != std::string::npos);
  }
  CHECK(threw);

  // Gap in the day index is rejected, also with the line number.
  {
    std::ofstream out(path);
    out << native_header() << '\n';
    out << row_of("0", 3.0) << '\n';
    out << row_of("2", 3.0) << '\n';  // line 3: skips day 1
  }
  bool threw_gap = false;
  try {
    load_yield_csv(path);
  } catch (const ParseError& e) {
    threw_gap = true;
    const std::string msg = e.what();
    CHECK(msg.find("not contiguous") != std::string::npos);
    CHECK(msg.find("line 3") != std::string::npos);
  }
  CHECK(threw_gap);

  // Empty file.
  { std::ofstream out(path); }
  CHECK_THROWS_AS(load_yield_csv(path), ParseError);

  // Bond file with a bad price.
  const std::string bpath = (dir / "bonds.csv").string();
  {
    std::ofstream out(bpath);
    out << "date_index,bond_id,price,coupon_rate_pct,frequency_per_year,maturity_years\n";
    out << "0,b1,101.5,3.0,2,5.0\n";
    out << "0,b2,-4.0,3.0,2,7.0\n";  // line 3: non-positive price
  }
  bool threw_price = false;
  try {
    load_bond_csv(bpath);
  } catch (const ParseError& e) {
    threw_price = true;
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK(threw_price);
  fs::remove_all(dir);
}
