#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "afcurve/arbitrage.hpp"
#include "afcurve/curve.hpp"
#include "afcurve/data.hpp"
#include "afcurve/dynamics.hpp"
#include "afcurve/filters.hpp"
#include "afcurve/metrics.hpp"
#include "afcurve/neural.hpp"
#include "afcurve/particle.hpp"

// Ties the recurrent parameter network, the factor dynamics and a filter into
// the composite training objective, and drives h-day-ahead forecasting over a
// chronological train/validation/test split.

namespace afcurve {

enum class FilterKind { kKF, kEKF, kPF };
enum class ObsNoiseMode { kFixed, kResidualHead };

// Non-finite loss or gradient; the message carries epoch/step diagnostics.
class NumericAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SplitSpec {
  double train_fraction = 0.8;  // chronological
  double val_fraction = 0.1;    // tail share of the training segment
  int seq_len = 20;             // trading days per training sequence
};

struct SplitIndex {
  int val_begin = 0;   // first validation day
  int test_begin = 0;  // first test day
  int end = 0;         // one past the last day
};

SplitIndex make_split(int days, const SplitSpec& spec);

// Partition of day indices by residue mod h; union is the input and the
// parts are pairwise disjoint.
std::vector<std::vector<int>> offsets_split(const std::vector<int>& day_indices, int h = 5);

struct TrainConfig {
  AerConfig aer = AerConfig::standard();  // aer.weight is the penalty multiplier lambda
  int horizon = 1;
  int epochs = 30;
  double lr = 1e-3;
  double lr_decay = 0.95;  // per-epoch multiplier on the learning rate
  int patience = 8;
  std::uint64_t seed = 42;
  FilterKind filter = FilterKind::kKF;
  ObsNoiseMode noise_mode = ObsNoiseMode::kResidualHead;
  // Measurement noise sd when noise_mode == kFixed: yield units (decimal)
  // for curve observations, dollars for price panels.
  double fixed_noise_sd = 4e-4;
  int particles = 1000;
  double mggd_p = 1.0;
  double mggd_m = 1.0;
  ResamplePolicy resample = ResamplePolicy::kEveryStep;
  SplitSpec split;

  void validate() const;
};

// Network wiring around one filter: an input encoder (dense-input LSTM for
// curves, convolutional LSTM for price panels) feeding a second LSTM whose
// cell state drives the parameter heads, plus the innovation-driven
// measurement-noise head on the tenor grid.
struct ModelSpec {
  bool price_based = false;
  TenorGrid grid;
  NSParams ns;
  int hidden = 16;
  LstmLayout lstm1;   // curve input branch
  ClstmLayout clstm;  // panel input branch
  LstmLayout lstm2;
  StateHeadLayout head;
  ResidualHeadLayout res;
  MatXd yield_m;  // grid measurement matrix, row i = B(tau_i)/tau_i

  int input_dim() const { return price_based ? clstm.positions : lstm1.input; }
};

// bias_init seeds the parameter-head output biases (kappa directly, theta and
// sigma through the inverse of the bounded activation); noise_guess sets the
// residual head's initial output scale.
ModelSpec make_yield_model(ParamStore& store, const TenorGrid& grid, const NSParams& ns,
                           int hidden, const FactorParams* bias_init, double noise_guess);
ModelSpec make_price_model(ParamStore& store, const TenorGrid& grid, const NSParams& ns,
                           int panel_size, int hidden, const FactorParams* bias_init,
                           double noise_guess);

// Reasonable head starting point fitted to the data: theta at the least-
// squares state of the mean curve over the first `days_for_mean` days,
// moderately fast mean reversion, small diagonal volatility.
FactorParams head_bias_init(const Dataset& data, int days_for_mean, const NSParams& ns);

// Index of the grid tenor closest to the given maturity.
int nearest_tenor_index(const TenorGrid& grid, double years);

// --- per-day state ------------------------------------------------------------

template <class T>
struct NetState {
  LstmState<T> l1, l2;
  LstmState<T> res;
  VecX<T> prev_e;  // previous innovation aggregated on the tenor grid
};

template <class T>
struct FilterCtx {
  FilterStateT<T> kf;   // KF / EKF moments
  ParticleSetT<T> pf;   // particle filter population
  NetState<T> net;
  int day = 0;  // last assimilated day
};

// Outputs of consuming day `ctx.day`'s observation: parameters for the next
// transition and the measurement-noise diagonal on the tenor grid.
template <class T>
struct DayPrep {
  FactorParamsT<T> factors;
  DiscreteTransitionT<T> tr;
  VecX<T> u_grid;  // per-tenor measurement variance
};

template <class T>
struct DayAdvance {
  VecX<T> innovation;  // observation-space one-step-ahead error at ctx.day
  VecX<T> post_mean;
  FactorParamsT<T> factors;  // parameters used for the transition into this day
  double ess_fraction = 1.0;
  bool resampled = false;
};

template <class T>
VecX<T> curve_input(const VecXd& yields) {
  // Center near historical yield levels and rescale to O(1) for the cells.
  VecX<T> v(yields.size());
  for (int i = 0; i < yields.size(); ++i) v[i] = T((yields[i] * 100.0 - 3.0) * 0.5);
  return v;
}

template <class T>
MatX<T> panel_input(const BondPanel& panel) {
  const int n = int(panel.bonds.size());
  MatX<T> x(n, 4);
  for (int i = 0; i < n; ++i) {
    const BondQuote& b = panel.bonds[std::size_t(i)];
    x(i, 0) = T(b.observed_price / 100.0 - 1.0);
    x(i, 1) = T(b.spec.maturity_years / 30.0);
    x(i, 2) = T(b.spec.coupon_rate / 5.0);
    x(i, 3) = T(double(b.spec.frequency) / 2.0);
  }
  return x;
}

// Mean innovation per grid tenor (nearest-tenor bucketing); empty tenors stay
// zero so the noise head sees a fixed-width input.
template <class T>
VecX<T> grid_innovation(const BondPanel& panel, const VecX<T>& v, const TenorGrid& grid) {
  VecX<T> e = zeros_vec<T>(grid.size());
  std::vector<int> count(std::size_t(grid.size()), 0);
  for (int j = 0; j < v.size(); ++j) {
    const int idx = nearest_tenor_index(grid, panel.bonds[std::size_t(j)].spec.maturity_years);
    e[idx] = e[idx] + v[j];
    count[std::size_t(idx)] += 1;
  }
  for (int i = 0; i < e.size(); ++i)
    if (count[std::size_t(i)] > 1) e[i] = e[i] * (1.0 / count[std::size_t(i)]);
  return e;
}

template <class T>
FilterCtx<T> init_filter_ctx(const ModelSpec& spec, const Dataset& data, const TrainConfig& cfg,
                             int start_day) {
  // The anchor state is a cross-sectional fit to the first day; it is a
  // constant of the optimization, not a differentiable quantity.  Its error
  // covariance doubles as the initial state covariance, so weakly identified
  // factors (curvature on a quiet curve) start appropriately uncertain.
  VecXd x0;
  MatXd p0;
  if (data.has_yields()) {
    const VecXd& y = data.yields[std::size_t(start_day)].yields;
    x0 = ols_state(y, spec.grid, spec.ns);
    p0 = ols_state_cov(y, x0, spec.grid, spec.ns);
  } else {
    const BondPanel& panel = data.panels[std::size_t(start_day)];
    const ExtractResult er = extract_state(panel, spec.ns, zeros_vec<double>(kStateDim));
    x0 = er.state;
    p0 = panel_state_cov(panel, x0, er.rmse, spec.ns);
  }
  for (int i = 0; i < kStateDim; ++i) p0(i, i) += 1e-10;

  FilterCtx<T> ctx;
  ctx.day = start_day;
  ctx.kf.mean = lift_vector<T>(x0);
  ctx.kf.cov = lift_matrix<T>(p0);
  ctx.kf.date_index = start_day;
  if (cfg.filter == FilterKind::kPF) {
    const ParticleSet ps = init_particles(FilterState{x0, p0, start_day}, cfg.particles,
                                          derive_seed(cfg.seed, 0x50f5ULL, std::uint64_t(start_day)));
    ctx.pf = lift_particles<T>(ps);
  }
  ctx.net.l1 = lstm_zero_state<T>(spec.hidden);
  ctx.net.l2 = lstm_zero_state<T>(spec.hidden);
  ctx.net.res = lstm_zero_state<T>(spec.res.hidden);
  ctx.net.prev_e = zeros_vec<T>(spec.res.features);
  return ctx;
}

template <class T>
VecX<T> posterior_mean(const FilterCtx<T>& ctx, FilterKind filter) {
  if (filter != FilterKind::kPF) return ctx.kf.mean;
  VecX<T> m = zeros_vec<T>(kStateDim);
  for (int i = 0; i < ctx.pf.size(); ++i)
    for (int k = 0; k < kStateDim; ++k)
      m[k] = m[k] + ctx.pf.weights[i] * ctx.pf.states[std::size_t(i)][k];
  return m;
}

template <class T>
VecX<T> propagate_mean(VecX<T> mean, const DiscreteTransitionT<T>& tr, int h) {
  for (int s = 0; s < h; ++s) mean = matvec(tr.A, mean) + tr.D;
  return mean;
}

// Consumes day ctx.day's observation through the network: factor parameters
// for the transition into ctx.day+1 and the noise diagonal for that day's
// measurement update.
template <class T>
DayPrep<T> prepare_transition(FilterCtx<T>& ctx, const ModelSpec& spec, const ParamsView<T>& pv,
                              const Dataset& data, const TrainConfig& cfg, BnStats& bn,
                              bool training) {
  if (!spec.price_based) {
    const VecX<T> input = curve_input<T>(data.yields[std::size_t(ctx.day)].yields);
    ctx.net.l1 = lstm_cell(pv, spec.lstm1, input, ctx.net.l1);
  } else {
    const BondPanel& panel = data.panels[std::size_t(ctx.day)];
    if (int(panel.bonds.size()) != spec.clstm.positions)
      throw std::invalid_argument("prepare_transition: panel size does not match the model");
    ctx.net.l1 = clstm_cell(pv, spec.clstm, panel_input<T>(panel), ctx.net.l1);
  }
  ctx.net.l2 = lstm_cell(pv, spec.lstm2, ctx.net.l1.h, ctx.net.l2);

  DayPrep<T> prep;
  prep.factors = state_head(pv, spec.head, ctx.net.l2.h);
  prep.tr = discretize(prep.factors, kTradingDt);
  if (cfg.noise_mode == ObsNoiseMode::kResidualHead) {
    prep.u_grid = residual_head_step(pv, spec.res, ctx.net.prev_e, bn, training, ctx.net.res);
  } else {
    prep.u_grid = VecX<T>(spec.res.features);
    const double var = cfg.fixed_noise_sd * cfg.fixed_noise_sd;
    for (int i = 0; i < prep.u_grid.size(); ++i) prep.u_grid[i] = T(var);
  }
  return prep;
}

// Predicts and assimilates day ctx.day+1 under the prepared transition.
template <class T>
DayAdvance<T> assimilate_next(FilterCtx<T>& ctx, const DayPrep<T>& prep, const ModelSpec& spec,
                              const Dataset& data, const TrainConfig& cfg) {
  const int next = ctx.day + 1;
  DayAdvance<T> adv;
  adv.factors = prep.factors;

  if (!spec.price_based) {
    const VecXd& obs = data.yields[std::size_t(next)].yields;
    const VecX<T> y = lift_vector<T>(obs);
    const ObsNoiseT<T> noise = ObsNoiseT<T>::diagonal(prep.u_grid);
    if (cfg.filter != FilterKind::kPF) {
      // The curve measurement is linear, so the extended filter coincides
      // with the plain one here.
      ctx.kf = kf_predict(ctx.kf, prep.tr);
      const MatX<T> m = lift_matrix<T>(spec.yield_m);
      auto upd = kf_update(ctx.kf, m, y, noise, KfOptions{});
      ctx.kf = std::move(upd.posterior);
      adv.innovation = std::move(upd.innovation);
      adv.post_mean = ctx.kf.mean;
    } else {
      LinearMeasurement<T> meas(spec.yield_m);
      const MggdParamsT<T> mggd{cfg.mggd_p, cfg.mggd_m, noise};
      const auto r = pf_step(ctx.pf, prep.tr, meas, y, mggd, noise, cfg.resample);
      adv.innovation = y - r.predicted;
      adv.post_mean = r.posterior_mean;
      adv.ess_fraction = r.ess_fraction;
      adv.resampled = r.resampled;
    }
    ctx.net.prev_e = adv.innovation;
  } else {
    const BondPanel& panel = data.panels[std::size_t(next)];
    const int m = int(panel.bonds.size());
    VecX<T> u(m);
    for (int j = 0; j < m; ++j)
      u[j] = prep.u_grid[nearest_tenor_index(spec.grid, panel.bonds[std::size_t(j)].spec.maturity_years)];
    const ObsNoiseT<T> noise = ObsNoiseT<T>::diagonal(u);
    if (cfg.filter == FilterKind::kEKF) {
      ctx.kf = kf_predict(ctx.kf, prep.tr);
      auto upd = ekf_update(ctx.kf, panel, noise, spec.ns, KfOptions{});
      ctx.kf = std::move(upd.posterior);
      adv.innovation = std::move(upd.innovation);
      adv.post_mean = ctx.kf.mean;
    } else if (cfg.filter == FilterKind::kPF) {
      PanelMeasurement<T> meas(panel, spec.ns);
      const MggdParamsT<T> mggd{cfg.mggd_p, cfg.mggd_m, noise};
      const VecX<T> y = lift_vector<T>(observed_prices(panel));
      const auto r = pf_step(ctx.pf, prep.tr, meas, y, mggd, noise, cfg.resample);
      adv.innovation = y - r.predicted;
      adv.post_mean = r.posterior_mean;
      adv.ess_fraction = r.ess_fraction;
      adv.resampled = r.resampled;
    } else {
      throw std::invalid_argument("assimilate_next: price panels need the EKF or PF");
    }
    ctx.net.prev_e = grid_innovation(panel, adv.innovation, spec.grid);
  }
  ctx.day = next;
  return adv;
}

// --- sequence objective ---------------------------------------------------------

template <class T>
struct SequenceEval {
  T composite{0.0};
  T pred{0.0};
  T aer{0.0};
};

// Composite objective over `len` consecutive days starting at `start`:
// mean squared one-step innovation plus lambda times the average
// excess-return penalty along the filtered path.
template <class T>
SequenceEval<T> sequence_loss(const ModelSpec& spec, const ParamsView<T>& pv, const Dataset& data,
                              int start, int len, const TrainConfig& cfg, BnStats& bn,
                              bool training) {
  if (len < 2) throw std::invalid_argument("sequence_loss: need at least two days");
  if (start < 0 || start + len > data.days())
    throw std::invalid_argument("sequence_loss: window out of range");

  FilterCtx<T> ctx = init_filter_ctx<T>(spec, data, cfg, start);
  std::vector<VecX<T>> innovations;
  std::vector<VecX<T>> states;
  std::vector<FactorParamsT<T>> factors;
  innovations.reserve(std::size_t(len - 1));
  states.reserve(std::size_t(len - 1));
  factors.reserve(std::size_t(len - 1));

  for (int t = start; t + 1 < start + len; ++t) {
    DayPrep<T> prep = prepare_transition(ctx, spec, pv, data, cfg, bn, training);
    DayAdvance<T> adv = assimilate_next(ctx, prep, spec, data, cfg);
    innovations.push_back(std::move(adv.innovation));
    states.push_back(std::move(adv.post_mean));
    factors.push_back(std::move(adv.factors));
  }

  SequenceEval<T> ev;
  ev.pred = prediction_loss(innovations);
  if (cfg.aer.weight > 0.0) {
    ev.aer = aer_penalty(states, factors, cfg.aer, spec.ns);
    ev.composite = ev.pred + ev.aer * cfg.aer.weight;
  } else {
    // Off the objective: still report the penalty, evaluated numerically so
    // no tape work is spent on it.
    std::vector<VecXd> s(states.size());
    std::vector<FactorParams> f(factors.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
      s[i] = VecXd(kStateDim);
      for (int k = 0; k < kStateDim; ++k) s[i][k] = value_of(states[i][k]);
      f[i].kappa = MatXd(kStateDim, kStateDim);
      f[i].sigma = MatXd(kStateDim, kStateDim);
      f[i].theta = VecXd(kStateDim);
      for (int a = 0; a < kStateDim; ++a) {
        f[i].theta[a] = value_of(factors[i].theta[a]);
        for (int b = 0; b < kStateDim; ++b) {
          f[i].kappa(a, b) = value_of(factors[i].kappa(a, b));
          f[i].sigma(a, b) = value_of(factors[i].sigma(a, b));
        }
      }
    }
    ev.aer = T(aer_penalty(s, f, cfg.aer, spec.ns));
    ev.composite = ev.pred;
  }
  return ev;
}

// --- optimizer -------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(int n, AdamConfig cfg = {});

  // One update; lr_scale multiplies the configured rate (schedules).
  void step(std::span<double> params, std::span<const double> grad, double lr_scale = 1.0);

  std::vector<double>& m() { return m_; }
  std::vector<double>& v() { return v_; }
  std::int64_t& t() { return t_; }
  const std::vector<double>& m() const { return m_; }
  const std::vector<double>& v() const { return v_; }
  std::int64_t t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

// --- training ---------------------------------------------------------------------

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_aer = 0.0;
  double val_aer = 0.0;
};

struct TrainResult {
  std::vector<double> weights;  // best-validation snapshot
  BnStats bn;                   // statistics at that snapshot
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_run = 0;
  std::vector<HistoryRow> history;
};

// Gradient steps per training sequence with a seeded shuffle each epoch;
// early stopping restores the best validation-epoch weights.  `resume`
// continues a previous run bitwise; `epoch_sink` receives a resumable
// checkpoint after every epoch.
TrainResult train(const Dataset& data, const ModelSpec& spec, ParamStore& store,
                  const TrainConfig& cfg, const Checkpoint* resume = nullptr,
                  const std::function<void(const Checkpoint&, int)>& epoch_sink = {});

// Checkpoint with everything `train` needs to continue: parameters, optimizer
// moments, normalization statistics, best snapshot and history.
Checkpoint make_train_checkpoint(const ParamStore& store, const Adam& opt, const BnStats& bn,
                                 int epoch, int no_improve, const TrainResult& partial);

void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows);

// --- forecasting -----------------------------------------------------------------

struct ForecastOutput {
  std::vector<ForecastRow> rows;       // h-step predictions over the test days
  std::vector<EssTraceRow> ess;        // particle filter only
  std::vector<VecXd> states;           // filtered posterior mean per day
  std::vector<FactorParams> factors;   // day parameters aligned with states
  std::vector<int> state_days;
};

// Runs the filter across the whole sample (inference mode); at every test-day
// origin t the state is propagated h steps under that day's parameters with
// no intervening updates, and both grid yields and the day-(t+h) panel
// repricing are emitted.  h = 0 produces the filtered trace only.
ForecastOutput run_filter_forecast(const Dataset& data, const ModelSpec& spec,
                                   const ParamStore& store, const BnStats& bn,
                                   const TrainConfig& cfg, int h);

void write_forecast_csv(const std::string& path, const std::vector<ForecastRow>& rows);
std::vector<ForecastRow> load_forecast_csv(const std::string& path);

}  // namespace afcurve
