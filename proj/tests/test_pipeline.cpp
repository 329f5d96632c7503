#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "afcurve/pipeline.hpp"

using namespace afcurve;

namespace {

Dataset small_yield_data(int days, std::uint64_t seed, double noise = 4e-4) {
  SyntheticConfig sc = SyntheticConfig::defaults();
  sc.days = days;
  sc.seed = seed;
  sc.with_bonds = false;
  sc.yield_noise_sd = noise;
  return generate_synthetic(sc);
}

}  // namespace

TEST_CASE("chronological split puts validation at the tail of training") {
  SplitSpec spec;  // 0.8 / 0.1 / seq_len 20
  const SplitIndex idx = make_split(100, spec);
  CHECK(idx.test_begin == 80);
  CHECK(idx.val_begin == 72);
  CHECK(idx.end == 100);
  CHECK_THROWS_AS(make_split(2, spec), std::invalid_argument);
  SplitSpec bad = spec;
  bad.train_fraction = 1.0;
  CHECK_THROWS_AS(make_split(100, bad), std::invalid_argument);
}

TEST_CASE("offset partition is a disjoint cover by residue class") {
  std::vector<int> days;
  for (int t = 17; t < 63; ++t) days.push_back(t);
  const auto parts = offsets_split(days, 5);
  REQUIRE(parts.size() == 5);
  std::set<int> seen;
  for (int r = 0; r < 5; ++r)
    for (int t : parts[std::size_t(r)]) {
      CHECK(t % 5 == r);
      CHECK(seen.insert(t).second);  // no duplicates across parts
    }
  CHECK(seen.size() == days.size());
  CHECK_THROWS_AS(offsets_split(days, 0), std::invalid_argument);
}

TEST_CASE("seeded head dynamics stay inside their guard rails") {
  const Dataset data = small_yield_data(260, 5);
  const FactorParams p = head_bias_init(data, 200, NSParams{});
  for (int k = 0; k < 3; ++k) {
    CHECK(p.kappa(k, k) >= 0.1);
    CHECK(p.kappa(k, k) <= 2.0);
    CHECK(p.sigma(k, k) >= 4e-3);
    CHECK(p.sigma(k, k) <= 0.045);
    for (int j = 0; j < 3; ++j)
      if (j != k) {
        CHECK(p.kappa(k, j) == 0.0);
        CHECK(p.sigma(k, j) == 0.0);
      }
  }
  // theta equals the mean of the per-day cross-sectional least-squares states.
  VecXd mean_state = zeros_vec<double>(3);
  for (int t = 0; t < 200; ++t) {
    const VecXd x = ols_state(data.yields[std::size_t(t)].yields, data.grid, NSParams{});
    for (int k = 0; k < 3; ++k) mean_state[k] += x[k];
  }
  for (int k = 0; k < 3; ++k) {
    mean_state[k] /= 200.0;
    CHECK(p.theta[k] == doctest::Approx(mean_state[k]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(head_bias_init(data, 1, NSParams{}), std::invalid_argument);
}

TEST_CASE("nearest tenor lookup") {
  const TenorGrid grid = TenorGrid::standard23();
  CHECK(nearest_tenor_index(grid, 0.25) == 0);
  CHECK(nearest_tenor_index(grid, 30.0) == grid.size() - 1);
  CHECK(nearest_tenor_index(grid, 100.0) == grid.size() - 1);
  // 7y sits on the 84m point.
  CHECK(grid.months[std::size_t(nearest_tenor_index(grid, 7.0))] == 84);
}

TEST_CASE("filter context anchors at the first day's cross-sectional fit") {
  const Dataset data = small_yield_data(40, 6);
  TrainConfig cfg;
  ParamStore store;
  const ModelSpec spec = make_yield_model(store, data.grid, NSParams{}, 8, nullptr, 4e-4);
  const FilterCtx<double> ctx = init_filter_ctx<double>(spec, data, cfg, 0);

  const VecXd x0 = ols_state(data.yields[0].yields, spec.grid, spec.ns);
  CHECK(max_abs_diff(ctx.kf.mean, x0) == 0.0);
  MatXd p0 = ols_state_cov(data.yields[0].yields, x0, spec.grid, spec.ns);
  for (int i = 0; i < 3; ++i) p0(i, i) += 1e-10;
  CHECK(max_abs_diff(ctx.kf.cov, p0) == 0.0);
  CHECK(ctx.day == 0);
}

TEST_CASE("sequence objective composes prediction and penalty terms") {
  const Dataset data = small_yield_data(40, 7);
  ParamStore store;
  const FactorParams bias = head_bias_init(data, 30, NSParams{});
  const ModelSpec spec = make_yield_model(store, data.grid, NSParams{}, 8, &bias, 4e-4);
  store.initialize(7);
  ParamsView<double> pv{&store, std::span<const double>(store.flat())};

  TrainConfig plain;
  plain.aer.weight = 0.0;
  BnStats bn1 = BnStats::fresh(spec.res.features);
  const SequenceEval<double> off = sequence_loss(spec, pv, data, 0, 10, plain, bn1, false);

  TrainConfig weighted = plain;
  weighted.aer.weight = 0.7;
  BnStats bn2 = BnStats::fresh(spec.res.features);
  const SequenceEval<double> on = sequence_loss(spec, pv, data, 0, 10, weighted, bn2, false);

  // Same filtered path, so the parts agree and only the composition differs.
  CHECK(on.pred == doctest::Approx(off.pred).epsilon(1e-12));
  CHECK(on.aer == doctest::Approx(off.aer).epsilon(1e-9));
  CHECK(off.composite == doctest::Approx(off.pred).epsilon(1e-12));
  CHECK(on.composite == doctest::Approx(on.pred + 0.7 * on.aer).epsilon(1e-12));
  CHECK(off.pred > 0.0);
  CHECK(off.aer > 0.0);

  BnStats bn3 = BnStats::fresh(spec.res.features);
  CHECK_THROWS_AS(sequence_loss(spec, pv, data, 0, 1, plain, bn3, false), std::invalid_argument);
  CHECK_THROWS_AS(sequence_loss(spec, pv, data, 35, 10, plain, bn3, false), std::invalid_argument);
}

TEST_CASE("fixed-noise mode bypasses the learned noise head") {
  const Dataset data = small_yield_data(30, 8);
  ParamStore store;
  const ModelSpec spec = make_yield_model(store, data.grid, NSParams{}, 8, nullptr, 4e-4);
  store.initialize(8);
  ParamsView<double> pv{&store, std::span<const double>(store.flat())};
  TrainConfig cfg;
  cfg.noise_mode = ObsNoiseMode::kFixed;
  cfg.fixed_noise_sd = 3e-4;
  BnStats bn = BnStats::fresh(spec.res.features);
  FilterCtx<double> ctx = init_filter_ctx<double>(spec, data, cfg, 0);
  const DayPrep<double> prep = prepare_transition(ctx, spec, pv, data, cfg, bn, false);
  for (int i = 0; i < prep.u_grid.size(); ++i)
    CHECK(prep.u_grid[i] == doctest::Approx(9e-8).epsilon(1e-15));
}

TEST_CASE("optimizer converges on a convex quadratic") {
  // minimize sum (x_i - t_i)^2 from zero start.
  const std::vector<double> target{1.0, -2.0, 0.5, 3.0};
  std::vector<double> x(4, 0.0);
  AdamConfig cfg;
  cfg.lr = 0.05;
  Adam opt(4, cfg);
  for (int it = 0; it < 800; ++it) {
    std::vector<double> g(4);
    for (int i = 0; i < 4; ++i) g[std::size_t(i)] = 2.0 * (x[std::size_t(i)] - target[std::size_t(i)]);
    opt.step(x, g);
  }
  for (int i = 0; i < 4; ++i) CHECK(x[std::size_t(i)] == doctest::Approx(target[std::size_t(i)]).epsilon(1e-3));
  CHECK(opt.t() == 800);
}

TEST_CASE("training runs, stops on validation and restores the best weights") {
  const Dataset data = small_yield_data(320, 9);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 9;
  ParamStore store;
  const SplitIndex split = make_split(data.days(), cfg.split);
  const FactorParams bias = head_bias_init(data, split.val_begin, NSParams{});
  const ModelSpec spec = make_yield_model(store, data.grid, NSParams{}, 8, &bias, 4e-4);

  int sink_calls = 0;
  const TrainResult result = train(data, spec, store, cfg, nullptr,
                                   [&](const Checkpoint&, int) { ++sink_calls; });
  CHECK(result.epochs_run == 3);
  CHECK(sink_calls == 3);
  CHECK(int(result.history.size()) == 3);
  CHECK(result.best_epoch >= 0);
  CHECK(result.best_epoch <= 2);
  CHECK(std::isfinite(result.best_val));
  REQUIRE(int(result.weights.size()) == store.size());
  // The store carries the best-validation snapshot on exit.
  for (int i = 0; i < store.size(); ++i)
    CHECK(store.flat()[std::size_t(i)] == result.weights[std::size_t(i)]);
  // Validation loss in history matches the reported best at the best epoch.
  double best_seen = std::numeric_limits<double>::infinity();
  for (const HistoryRow& row : result.history) best_seen = std::min(best_seen, row.val_loss);
  CHECK(best_seen == doctest::Approx(result.best_val));
}

TEST_CASE("forecast driver emits rows only for complete test-day horizons") {
  const Dataset data = small_yield_data(320, 10);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.seed = 10;
  ParamStore store;
  const SplitIndex split = make_split(data.days(), cfg.split);
  const FactorParams bias = head_bias_init(data, split.val_begin, NSParams{});
  const ModelSpec spec = make_yield_model(store, data.grid, NSParams{}, 8, &bias, 4e-4);
  const TrainResult tr = train(data, spec, store, cfg);

  const int h = 5;
  const ForecastOutput out = run_filter_forecast(data, spec, store, tr.bn, cfg, h);
  REQUIRE(!out.rows.empty());
  std::set<int> targets;
  for (const ForecastRow& row : out.rows) {
    CHECK(row.horizon == h);
    CHECK(row.date_index >= split.test_begin + h);
    CHECK(row.date_index < data.days());
    CHECK(row.offset == (row.date_index - h) % 5);
    targets.insert(row.date_index);
  }
  // One origin per test day with a complete horizon.
  CHECK(int(targets.size()) == data.days() - h - split.test_begin);
  // Filtered trace covers every assimilated day.
  CHECK(int(out.states.size()) == data.days() - 1);

  // Horizon zero produces the trace only.
  const ForecastOutput trace = run_filter_forecast(data, spec, store, tr.bn, cfg, 0);
  CHECK(trace.rows.empty());
  CHECK(int(trace.states.size()) == data.days() - 1);
}

TEST_CASE("training configuration is validated") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.lr = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.particles = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  CHECK_NOTHROW(cfg.validate());
}
