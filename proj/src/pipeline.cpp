#include "afcurve/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "afcurve/csv.hpp"
#include "afcurve/log.hpp"

namespace afcurve {

SplitIndex make_split(int days, const SplitSpec& spec) {
  if (days < 3) throw std::invalid_argument("make_split: need at least three days");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw std::invalid_argument("make_split: train fraction must lie in (0,1)");
  if (!(spec.val_fraction >= 0.0 && spec.val_fraction < 1.0))
    throw std::invalid_argument("make_split: validation fraction must lie in [0,1)");
  SplitIndex idx;
  idx.end = days;
  idx.test_begin = std::clamp(int(std::floor(spec.train_fraction * days)), 1, days - 1);
  const int val_len = int(std::floor(spec.val_fraction * idx.test_begin));
  idx.val_begin = idx.test_begin - val_len;
  return idx;
}

std::vector<std::vector<int>> offsets_split(const std::vector<int>& day_indices, int h) {
  if (h < 1) throw std::invalid_argument("offsets_split: h must be >= 1");
  std::vector<std::vector<int>> parts(static_cast<std::size_t>(h));
  for (int t : day_indices) {
    const int r = ((t % h) + h) % h;
    parts[std::size_t(r)].push_back(t);
  }
  return parts;
}

void TrainConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("TrainConfig: horizon must be >= 1");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (!(lr >= 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be >= 0");
  if (!(lr_decay > 0.0)) throw std::invalid_argument("TrainConfig: lr decay must be positive");
  if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
  if (particles < 1) throw std::invalid_argument("TrainConfig: particles must be >= 1");
  if (!(mggd_p > 0.0) || !(mggd_m > 0.0))
    throw std::invalid_argument("TrainConfig: MGGD shape and scale must be positive");
  if (!(aer.p >= 1.0)) throw std::invalid_argument("TrainConfig: AER exponent must be >= 1");
  if (!(aer.weight >= 0.0)) throw std::invalid_argument("TrainConfig: AER weight must be >= 0");
  if (split.seq_len < 2) throw std::invalid_argument("TrainConfig: sequences need >= 2 days");
  if (!(fixed_noise_sd > 0.0) && noise_mode == ObsNoiseMode::kFixed)
    throw std::invalid_argument("TrainConfig: fixed noise sd must be positive");
}

int nearest_tenor_index(const TenorGrid& grid, double years) {
  int best = 0;
  double best_d = std::fabs(grid.years(0) - years);
  for (int i = 1; i < grid.size(); ++i) {
    const double d = std::fabs(grid.years(i) - years);
    if (d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

ModelSpec make_yield_model(ParamStore& store, const TenorGrid& grid, const NSParams& ns,
                           int hidden, const FactorParams* bias_init, double noise_guess) {
  ModelSpec spec;
  spec.price_based = false;
  spec.grid = grid;
  spec.ns = ns;
  spec.hidden = hidden;
  spec.lstm1 = register_lstm(store, "enc1", grid.size(), hidden);
  spec.lstm2 = register_lstm(store, "enc2", hidden, hidden);
  spec.head = register_state_head(store, "head", hidden, bias_init);
  spec.res = register_residual_head(store, "res", grid.size(), hidden, noise_guess);
  spec.yield_m = yield_measurement_matrix(grid, ns);
  return spec;
}

ModelSpec make_price_model(ParamStore& store, const TenorGrid& grid, const NSParams& ns,
                           int panel_size, int hidden, const FactorParams* bias_init,
                           double noise_guess) {
  ModelSpec spec;
  spec.price_based = true;
  spec.grid = grid;
  spec.ns = ns;
  spec.hidden = hidden;
  spec.clstm = register_clstm(store, "enc1", panel_size, 4, hidden);
  spec.lstm2 = register_lstm(store, "enc2", hidden, hidden);
  spec.head = register_state_head(store, "head", hidden, bias_init);
  spec.res = register_residual_head(store, "res", grid.size(), hidden, noise_guess);
  spec.yield_m = yield_measurement_matrix(grid, ns);
  return spec;
}

FactorParams head_bias_init(const Dataset& data, int days_for_mean, const NSParams& ns) {
  const int n = std::min(days_for_mean, data.days());
  if (n < 2) throw std::invalid_argument("head_bias_init: need at least two days");
  const TenorGrid& grid = data.grid;

  // Cross-sectional factor fits carry measurement noise: each fitted state is
  // x_t + eta_t with cov(eta) ~ s^2 (M^T M)^{-1}, s^2 the residual variance of
  // the fit.  Naive AR(1) moments on such a series are attenuated (the noise
  // inflates the regressor variance), which badly over-states the reversion
  // speed for weakly identified factors.  Track the per-factor noise variance
  // alongside the states so the moments can be corrected below.
  std::vector<VecXd> states;
  states.reserve(std::size_t(n));
  VecXd noise_var = zeros_vec<double>(kStateDim);
  VecXd warm = zeros_vec<double>(kStateDim);
  for (int t = 0; t < n; ++t) {
    VecXd x;
    MatXd cov;
    if (data.has_yields()) {
      const VecXd& y = data.yields[std::size_t(t)].yields;
      x = ols_state(y, grid, ns);
      cov = ols_state_cov(y, x, grid, ns);
    } else {
      const BondPanel& panel = data.panels[std::size_t(t)];
      const ExtractResult er = extract_state(panel, ns, warm);
      warm = er.state;
      x = er.state;
      cov = panel_state_cov(panel, x, er.rmse, ns);
    }
    for (int k = 0; k < kStateDim; ++k) noise_var[k] += cov(k, k);
    states.push_back(std::move(x));
  }
  for (int k = 0; k < kStateDim; ++k) noise_var[k] /= n;

  FactorParams p;
  p.kappa = zeros<double>(kStateDim, kStateDim);
  p.sigma = zeros<double>(kStateDim, kStateDim);
  p.theta = zeros_vec<double>(kStateDim);

  // Per-factor AR(1) moments with an errors-in-variables correction: the
  // lag-1 cross moment of the fitted series is unbiased for a * var(x) (the
  // fit noise is independent across days), while the zero-lag moment equals
  // var(x) + noise_var.  Subtracting the known noise variance from the
  // denominator recovers an unattenuated persistence estimate; the diffusion
  // scale then follows from stationarity, var(x) = sigma^2 / (2 kappa).
  for (int k = 0; k < kStateDim; ++k) {
    double mx = 0.0;
    for (const auto& s : states) mx += s[k];
    mx /= n;
    p.theta[k] = mx;

    double c0 = 0.0, c1 = 0.0;
    for (int t = 0; t < n; ++t) {
      const double d = states[std::size_t(t)][k] - mx;
      c0 += d * d;
      if (t + 1 < n) c1 += d * (states[std::size_t(t + 1)][k] - mx);
    }
    c0 /= n;
    c1 /= std::max(1, n - 1);
    const double signal_var = std::max(c0 - noise_var[k], 0.02 * std::max(c0, 1e-12));
    const double a = std::clamp(c1 / signal_var, 0.01, 0.9995);
    // Conservative reversion-speed ceiling.  Sample autocorrelations identify
    // kappa to within a factor of a few at best, over-stated reversion biases
    // every multi-day forecast through the pull term kappa (theta - x), and a
    // too-slow start costs almost nothing (the filter's gain still tracks the
    // data day to day).  Mis-stated pulls also leak into theta during
    // training, which multiplies the damage at longer horizons.
    const double kappa = std::clamp(-std::log(a) / kTradingDt, 0.1, 2.0);
    p.kappa(k, k) = kappa;
    // Floor the diffusion start value: the squared-scale loss surface is
    // stationary at sigma = 0, so optimization recovers from an over-stated
    // start but can stall on an under-stated one.
    p.sigma(k, k) = std::clamp(std::sqrt(2.0 * kappa * signal_var), 4e-3, 0.045);
  }
  return p;
}

// --- optimizer -------------------------------------------------------------------

Adam::Adam(int n, AdamConfig cfg)
    : cfg_(cfg), m_(std::size_t(n), 0.0), v_(std::size_t(n), 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad, double lr_scale) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw std::invalid_argument("Adam: parameter/gradient size mismatch");
  t_ += 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  const double lr = cfg_.lr * lr_scale;
  for (std::size_t i = 0; i < m_.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    params[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.eps);
  }
}

// --- training ---------------------------------------------------------------------

namespace {

std::vector<int> sequence_starts(int begin, int end, int seq_len) {
  std::vector<int> starts;
  for (int s = begin; s + seq_len <= end; s += seq_len) starts.push_back(s);
  return starts;
}

struct BestSnapshot {
  std::vector<double> weights;
  BnStats bn;
  int epoch = -1;
  double val = std::numeric_limits<double>::infinity();
};

}  // namespace

Checkpoint make_train_checkpoint(const ParamStore& store, const Adam& opt, const BnStats& bn,
                                 int epoch, int no_improve, const TrainResult& partial) {
  Checkpoint c;
  params_to_checkpoint(store, c);
  c.put("opt.m", {int(opt.m().size())}, opt.m());
  c.put("opt.v", {int(opt.v().size())}, opt.v());
  c.meta["opt.t"] = std::to_string(opt.t());
  c.put("bn.mean", {bn.mean.size()}, std::vector<double>(bn.mean.begin(), bn.mean.end()));
  c.put("bn.var", {bn.var.size()}, std::vector<double>(bn.var.begin(), bn.var.end()));
  c.meta["epoch"] = std::to_string(epoch);
  c.meta["no_improve"] = std::to_string(no_improve);
  if (partial.best_epoch >= 0) {
    c.put("best.weights", {int(partial.weights.size())}, partial.weights);
    c.put("best.bn.mean", {partial.bn.mean.size()},
          std::vector<double>(partial.bn.mean.begin(), partial.bn.mean.end()));
    c.put("best.bn.var", {partial.bn.var.size()},
          std::vector<double>(partial.bn.var.begin(), partial.bn.var.end()));
    c.put("best.val", {1}, {partial.best_val});
    c.meta["best_epoch"] = std::to_string(partial.best_epoch);
  }
  if (!partial.history.empty()) {
    std::vector<double> h;
    h.reserve(partial.history.size() * 5);
    for (const HistoryRow& r : partial.history) {
      h.push_back(double(r.epoch));
      h.push_back(r.train_loss);
      h.push_back(r.val_loss);
      h.push_back(r.train_aer);
      h.push_back(r.val_aer);
    }
    c.put("history", {int(partial.history.size()), 5}, std::move(h));
  }
  return c;
}

namespace {

void restore_bn(BnStats& bn, const Checkpoint& c, const std::string& mean_key,
                const std::string& var_key) {
  const int f = bn.mean.size();
  const auto& m = c.get(mean_key, {f});
  const auto& v = c.get(var_key, {f});
  for (int i = 0; i < f; ++i) {
    bn.mean[i] = m[std::size_t(i)];
    bn.var[i] = v[std::size_t(i)];
  }
}

}  // namespace

TrainResult train(const Dataset& data, const ModelSpec& spec, ParamStore& store,
                  const TrainConfig& cfg, const Checkpoint* resume,
                  const std::function<void(const Checkpoint&, int)>& epoch_sink) {
  cfg.validate();
  const SplitIndex split = make_split(data.days(), cfg.split);
  const std::vector<int> train_starts = sequence_starts(0, split.val_begin, cfg.split.seq_len);
  const std::vector<int> val_starts =
      sequence_starts(split.val_begin, split.test_begin, cfg.split.seq_len);
  if (train_starts.empty())
    throw std::invalid_argument("train: training segment shorter than one sequence");
  if (val_starts.empty())
    throw std::invalid_argument("train: validation segment shorter than one sequence");

  // Fresh runs draw the recurrent and head weight matrices here; a resume
  // overwrites everything from the checkpoint below.
  if (!resume) store.initialize(std::uint64_t(cfg.seed));

  BnStats bn = BnStats::fresh(spec.res.features);
  Adam opt(store.size(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  BestSnapshot best;
  best.bn = bn;
  TrainResult result;
  int start_epoch = 0;
  int no_improve = 0;

  if (resume) {
    params_from_checkpoint(store, *resume);
    const int n = store.size();
    opt.m() = resume->get("opt.m", {n});
    opt.v() = resume->get("opt.v", {n});
    opt.t() = std::stoll(resume->meta.at("opt.t"));
    restore_bn(bn, *resume, "bn.mean", "bn.var");
    start_epoch = std::stoi(resume->meta.at("epoch")) + 1;
    no_improve = std::stoi(resume->meta.at("no_improve"));
    if (resume->has("best.weights")) {
      best.weights = resume->get("best.weights", {n});
      best.bn = BnStats::fresh(spec.res.features);
      restore_bn(best.bn, *resume, "best.bn.mean", "best.bn.var");
      best.val = resume->get("best.val", {1})[0];
      best.epoch = std::stoi(resume->meta.at("best_epoch"));
    }
    if (resume->has("history")) {
      const auto& e = resume->arrays.at("history");
      const int rows = e.first[0];
      for (int r = 0; r < rows; ++r) {
        const double* p = e.second.data() + std::size_t(r) * 5;
        result.history.push_back(HistoryRow{int(p[0]), p[1], p[2], p[3], p[4]});
      }
    }
  }

  std::vector<double> grad(std::size_t(store.size()), 0.0);
  const std::size_t tape_budget =
      std::min<std::size_t>(std::size_t(cfg.split.seq_len) *
                                (cfg.filter == FilterKind::kPF
                                     ? std::size_t(cfg.particles) * 12000
                                     : std::size_t(60000)),
                            std::size_t(4) << 20);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr_scale = std::pow(cfg.lr_decay, double(epoch));

    std::vector<int> order = train_starts;
    Rng shuffle_rng(derive_seed(cfg.seed, 0xe90cULL, std::uint64_t(epoch)));
    for (int i = int(order.size()) - 1; i > 0; --i) {
      const int j = int(shuffle_rng.uniform_int(0, i));
      std::swap(order[std::size_t(i)], order[std::size_t(j)]);
    }

    double ep_loss = 0.0, ep_aer = 0.0;
    ad::Tape tape;
    tape.reserve(tape_budget);
    int step_no = 0;
    for (int s : order) {
      ++step_no;
      tape.clear();
      ad::TapeScope scope(tape);
      std::vector<ad::Var> vars;
      vars.reserve(std::size_t(store.size()));
      for (double p : store.flat()) vars.emplace_back(p);
      ParamsView<ad::Var> pv{&store, std::span<const ad::Var>(vars)};

      SequenceEval<ad::Var> ev;
      try {
        ev = sequence_loss<ad::Var>(spec, pv, data, s, cfg.split.seq_len, cfg, bn, true);
      } catch (const ad::NonFiniteError& err) {
        throw NumericAbort("train: " + std::string(err.what()) + " at epoch " +
                           std::to_string(epoch) + ", step " + std::to_string(step_no) +
                           ", sequence start " + std::to_string(s));
      }
      const double loss_v = value_of(ev.composite);
      if (!std::isfinite(loss_v))
        throw NumericAbort("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step_no) + ", sequence start " +
                           std::to_string(s));
      const std::vector<double> adj = tape.backward(ev.composite.idx);
      for (int i = 0; i < store.size(); ++i) {
        const double g = adj[std::size_t(vars[std::size_t(i)].idx)];
        if (!std::isfinite(g))
          throw NumericAbort("train: non-finite gradient (parameter " + std::to_string(i) +
                             ") at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step_no) + ", sequence start " + std::to_string(s));
        grad[std::size_t(i)] = g;
      }
      opt.step(store.flat(), grad, lr_scale);
      ep_loss += loss_v;
      ep_aer += value_of(ev.aer);
    }

    double val_loss = 0.0, val_aer = 0.0;
    {
      ParamsView<double> dpv{&store, std::span<const double>(store.flat())};
      for (int s : val_starts) {
        const auto ev = sequence_loss<double>(spec, dpv, data, s, cfg.split.seq_len, cfg, bn, false);
        val_loss += ev.composite;
        val_aer += ev.aer;
      }
      val_loss /= double(val_starts.size());
      val_aer /= double(val_starts.size());
    }

    HistoryRow row;
    row.epoch = epoch;
    row.train_loss = ep_loss / double(order.size());
    row.val_loss = val_loss;
    row.train_aer = ep_aer / double(order.size());
    row.val_aer = val_aer;
    result.history.push_back(row);
    result.epochs_run = epoch + 1;

    if (val_loss < best.val) {
      best.val = val_loss;
      best.epoch = epoch;
      best.weights = store.flat();
      best.bn = bn;
      no_improve = 0;
    } else {
      ++no_improve;
    }

    log_info("epoch " + std::to_string(epoch) + " train " + std::to_string(row.train_loss) +
             " val " + std::to_string(row.val_loss) + " aer " + std::to_string(row.train_aer));

    if (epoch_sink) {
      TrainResult partial;
      partial.weights = best.weights;
      partial.bn = best.bn;
      partial.best_epoch = best.epoch;
      partial.best_val = best.val;
      partial.history = result.history;
      epoch_sink(make_train_checkpoint(store, opt, bn, epoch, no_improve, partial), epoch);
    }

    if (no_improve >= cfg.patience) break;
  }

  if (best.epoch < 0) {
    best.weights = store.flat();
    best.bn = bn;
  }
  result.weights = best.weights;
  result.bn = best.bn;
  result.best_epoch = best.epoch;
  result.best_val = best.val;
  store.flat() = best.weights;
  return result;
}

void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_history_csv: cannot open " + path);
  out << "epoch,train_loss,val_loss,train_aer,val_aer\n";
  for (const HistoryRow& r : rows)
    out << r.epoch << ',' << csv::fmt(r.train_loss) << ',' << csv::fmt(r.val_loss) << ','
        << csv::fmt(r.train_aer) << ',' << csv::fmt(r.val_aer) << '\n';
}

// --- forecasting -----------------------------------------------------------------

namespace {

std::string tenor_label(double months) {
  std::ostringstream os;
  os << months << "m";
  return os.str();
}

FactorParams numeric_params(const FactorParamsT<double>& p) { return p; }

}  // namespace

ForecastOutput run_filter_forecast(const Dataset& data, const ModelSpec& spec,
                                   const ParamStore& store, const BnStats& bn0,
                                   const TrainConfig& cfg, int h) {
  cfg.validate();
  if (h < 0) throw std::invalid_argument("run_filter_forecast: negative horizon");
  const SplitIndex split = make_split(data.days(), cfg.split);
  BnStats bn = bn0;  // inference mode: the statistics stay frozen
  ParamsView<double> pv{&store, std::span<const double>(store.flat())};

  ForecastOutput out;
  FilterCtx<double> ctx = init_filter_ctx<double>(spec, data, cfg, 0);

  for (int t = 0; t + 1 < data.days(); ++t) {
    DayPrep<double> prep = prepare_transition(ctx, spec, pv, data, cfg, bn, false);

    if (h > 0 && t >= split.test_begin && t + h < data.days()) {
      const VecXd origin = posterior_mean(ctx, cfg.filter);
      const VecXd ahead = propagate_mean(origin, prep.tr, h);
      const int target = t + h;
      const int offset = t % 5;
      if (data.has_yields()) {
        const YieldCurve& obs = data.yields[std::size_t(target)];
        for (int i = 0; i < spec.grid.size(); ++i) {
          ForecastRow row;
          row.date_index = target;
          row.horizon = h;
          row.offset = offset;
          row.kind = "yield";
          row.key = tenor_label(spec.grid.months[std::size_t(i)]);
          row.tenor_years = spec.grid.years(i);
          row.predicted = yield_at(ahead, spec.grid.years(i), spec.ns);
          row.observed = obs.yields[i];
          out.rows.push_back(std::move(row));
        }
      }
      if (data.has_panels()) {
        const BondPanel& panel = data.panels[std::size_t(target)];
        const VecXd prices = reprice_panel(panel, ahead, spec.ns);
        for (int j = 0; j < int(panel.bonds.size()); ++j) {
          const BondQuote& b = panel.bonds[std::size_t(j)];
          ForecastRow row;
          row.date_index = target;
          row.horizon = h;
          row.offset = offset;
          row.kind = "price";
          row.key = b.spec.id;
          row.tenor_years = b.spec.maturity_years;
          row.predicted = prices[j];
          row.observed = b.observed_price;
          out.rows.push_back(std::move(row));
        }
      }
    }

    DayAdvance<double> adv = assimilate_next(ctx, prep, spec, data, cfg);
    out.states.push_back(adv.post_mean);
    out.factors.push_back(numeric_params(adv.factors));
    out.state_days.push_back(t + 1);
    if (cfg.filter == FilterKind::kPF) {
      EssTraceRow e;
      e.step = t + 1;
      e.ess_fraction = adv.ess_fraction;
      e.split = (t + 1) < split.test_begin ? "train" : "test";
      out.ess.push_back(std::move(e));
    }
  }
  return out;
}

void write_forecast_csv(const std::string& path, const std::vector<ForecastRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_forecast_csv: cannot open " + path);
  out << "date_index,horizon,offset,kind,key,tenor_years,predicted,observed\n";
  for (const ForecastRow& r : rows)
    out << r.date_index << ',' << r.horizon << ',' << r.offset << ',' << r.kind << ',' << r.key
        << ',' << csv::fmt(r.tenor_years) << ',' << csv::fmt(r.predicted) << ','
        << csv::fmt(r.observed) << '\n';
}

std::vector<ForecastRow> load_forecast_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_forecast_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("load_forecast_csv: empty file " + path);
  if (csv::trim(line) != "date_index,horizon,offset,kind,key,tenor_years,predicted,observed")
    throw std::runtime_error("load_forecast_csv: unexpected header in " + path);
  std::vector<ForecastRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split_line(line);
    long long d = 0, hz = 0, off = 0;
    ForecastRow r;
    if (f.size() != 8 || !csv::parse_int(f[0], d) || !csv::parse_int(f[1], hz) ||
        !csv::parse_int(f[2], off) || !csv::parse_double(f[5], r.tenor_years) ||
        !csv::parse_double(f[6], r.predicted) || !csv::parse_double(f[7], r.observed))
      throw std::runtime_error("load_forecast_csv: bad row at line " + std::to_string(line_no) +
                               " in " + path);
    r.date_index = int(d);
    r.horizon = int(hz);
    r.offset = int(off);
    r.kind = csv::trim(f[3]);
    r.key = csv::trim(f[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace afcurve
