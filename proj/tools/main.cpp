#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "afcurve/config.hpp"
#include "afcurve/log.hpp"
#include "afcurve/metrics.hpp"

namespace fs = std::filesystem;
using namespace afcurve;

namespace {

// Exit codes: 0 ok, 1 usage/config, 2 numeric failure, 3 missing artifact.
struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::optional<std::string> model, regime, filter, noise_mode, resample;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs, days, hidden, horizon, epochs, patience, particles, seq_len;
  std::optional<double> lambda, aer_p, lr, lr_decay, fixed_noise_sd, mggd_p, mggd_m, noise_guess,
      train_fraction, val_fraction, yield_noise_sd, price_noise_sd;
  std::optional<bool> bonds;
  std::string config;
};

void add_common_options(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--config", ov.config, "JSON run configuration; flags override the file");
  cmd->add_option("--seed", ov.seed, "Master seed for data, init and training");
  cmd->add_option("--jobs", ov.jobs, "Worker thread cap")->check(CLI::PositiveNumber);
  cmd->add_option("--model", ov.model, "Observation model: yield | price");
  cmd->add_option("--hidden", ov.hidden, "Recurrent state width");
  cmd->add_option("--noise-guess", ov.noise_guess, "Initial observation-noise scale");
  cmd->add_option("--lambda", ov.lambda, "Excess-return penalty weight");
  cmd->add_option("--aer-p", ov.aer_p, "Excess-return penalty norm order");
  cmd->add_option("--horizon", ov.horizon, "Forecast horizon in trading days");
  cmd->add_option("--epochs", ov.epochs, "Training epochs");
  cmd->add_option("--lr", ov.lr, "Learning rate");
  cmd->add_option("--lr-decay", ov.lr_decay, "Per-epoch learning-rate multiplier");
  cmd->add_option("--patience", ov.patience, "Early-stop patience in epochs");
  cmd->add_option("--filter", ov.filter, "State filter: kf | ekf | pf");
  cmd->add_option("--noise-mode", ov.noise_mode, "Observation noise: fixed | residual");
  cmd->add_option("--fixed-noise-sd", ov.fixed_noise_sd, "Noise sd when --noise-mode fixed");
  cmd->add_option("--particles", ov.particles, "Particle count for --filter pf");
  cmd->add_option("--mggd-p", ov.mggd_p, "Particle weight density shape");
  cmd->add_option("--mggd-m", ov.mggd_m, "Particle weight density scale");
  cmd->add_option("--resample", ov.resample, "Resampling policy: every | adaptive");
  cmd->add_option("--seq-len", ov.seq_len, "Training sequence length in days");
  cmd->add_option("--train-fraction", ov.train_fraction, "Chronological train share");
  cmd->add_option("--val-fraction", ov.val_fraction, "Validation share of the train segment");
  cmd->add_option("--days", ov.days, "Synthetic sample length in days");
  cmd->add_option("--regime", ov.regime, "Synthetic dynamics: mid | fast | slow");
  cmd->add_option("--yield-noise-sd", ov.yield_noise_sd, "Synthetic yield noise (decimal)");
  cmd->add_option("--price-noise-sd", ov.price_noise_sd, "Synthetic price noise (dollars)");
  cmd->add_flag("--bonds,!--no-bonds", ov.bonds, "Emit a synthetic bond panel");
}

RunConfig effective_config(const Overrides& ov) {
  RunConfig cfg;
  if (!ov.config.empty()) {
    if (!fs::exists(ov.config)) throw MissingArtifact("config file not found: " + ov.config);
    cfg = load_run_config(ov.config);
  }
  if (ov.seed) {
    cfg.seed = *ov.seed;
    cfg.synthetic.seed = *ov.seed;
    cfg.train.seed = *ov.seed;
  }
  if (ov.model) cfg.model = *ov.model;
  if (ov.hidden) cfg.hidden = *ov.hidden;
  if (ov.noise_guess) cfg.noise_guess = *ov.noise_guess;
  if (ov.lambda) cfg.train.aer.weight = *ov.lambda;
  if (ov.aer_p) cfg.train.aer.p = *ov.aer_p;
  if (ov.horizon) cfg.train.horizon = *ov.horizon;
  if (ov.epochs) cfg.train.epochs = *ov.epochs;
  if (ov.lr) cfg.train.lr = *ov.lr;
  if (ov.lr_decay) cfg.train.lr_decay = *ov.lr_decay;
  if (ov.patience) cfg.train.patience = *ov.patience;
  if (ov.filter) {
    if (*ov.filter == "kf")
      cfg.train.filter = FilterKind::kKF;
    else if (*ov.filter == "ekf")
      cfg.train.filter = FilterKind::kEKF;
    else if (*ov.filter == "pf")
      cfg.train.filter = FilterKind::kPF;
    else
      throw UsageError("--filter must be kf, ekf or pf");
  }
  if (ov.noise_mode) {
    if (*ov.noise_mode == "fixed")
      cfg.train.noise_mode = ObsNoiseMode::kFixed;
    else if (*ov.noise_mode == "residual")
      cfg.train.noise_mode = ObsNoiseMode::kResidualHead;
    else
      throw UsageError("--noise-mode must be fixed or residual");
  }
  if (ov.fixed_noise_sd) cfg.train.fixed_noise_sd = *ov.fixed_noise_sd;
  if (ov.particles) cfg.train.particles = *ov.particles;
  if (ov.mggd_p) cfg.train.mggd_p = *ov.mggd_p;
  if (ov.mggd_m) cfg.train.mggd_m = *ov.mggd_m;
  if (ov.resample) {
    if (*ov.resample == "every")
      cfg.train.resample = ResamplePolicy::kEveryStep;
    else if (*ov.resample == "adaptive")
      cfg.train.resample = ResamplePolicy::kAdaptive;
    else
      throw UsageError("--resample must be every or adaptive");
  }
  if (ov.seq_len) cfg.train.split.seq_len = *ov.seq_len;
  if (ov.train_fraction) cfg.train.split.train_fraction = *ov.train_fraction;
  if (ov.val_fraction) cfg.train.split.val_fraction = *ov.val_fraction;
  if (ov.days) cfg.synthetic.days = *ov.days;
  if (ov.regime) {
    if (*ov.regime == "mid")
      cfg.synthetic.params = SyntheticConfig::defaults().params;
    else if (*ov.regime == "fast")
      cfg.synthetic.params = SyntheticConfig::fast_reversion().params;
    else if (*ov.regime == "slow")
      cfg.synthetic.params = SyntheticConfig::slow_reversion().params;
    else
      throw UsageError("--regime must be mid, fast or slow");
  }
  if (ov.yield_noise_sd) cfg.synthetic.yield_noise_sd = *ov.yield_noise_sd;
  if (ov.price_noise_sd) cfg.synthetic.price_noise_sd = *ov.price_noise_sd;
  if (ov.bonds) cfg.synthetic.with_bonds = *ov.bonds;
  cfg.validate();
  if (ov.jobs) log_debug("--jobs " + std::to_string(*ov.jobs) + " (commands are single-threaded)");
  return cfg;
}

std::string pick(const std::string& flag_value, const std::string& cfg_value,
                 const std::string& what) {
  if (!flag_value.empty()) return flag_value;
  if (!cfg_value.empty()) return cfg_value;
  throw UsageError("no " + what + " given (flag or config paths section)");
}

Dataset load_data_checked(const std::string& dir) {
  if (!fs::exists(dir)) throw MissingArtifact("data directory not found: " + dir);
  return load_dataset(dir);
}

int uniform_panel_size(const Dataset& ds) {
  const int n = int(ds.panels.front().bonds.size());
  for (const BondPanel& p : ds.panels)
    if (int(p.bonds.size()) != n)
      throw std::runtime_error("price model needs a uniform panel size; day " +
                               std::to_string(p.date_index) + " has " +
                               std::to_string(p.bonds.size()) + " bonds, expected " +
                               std::to_string(n));
  return n;
}

// Builds the network for the configured observation model, fresh or sized to
// match a checkpoint, and returns its spec.
ModelSpec build_model(ParamStore& store, const RunConfig& cfg, const Dataset& data,
                      const FactorParams* bias, int panel_size_hint = 0) {
  const TenorGrid grid = data.has_yields() ? data.grid : TenorGrid::standard23();
  if (cfg.model == "yield") {
    if (!data.has_yields()) throw std::runtime_error("yield model needs yields.csv in the data");
    return make_yield_model(store, grid, NSParams{}, cfg.hidden, bias, cfg.noise_guess);
  }
  if (!data.has_panels()) throw std::runtime_error("price model needs bonds.csv in the data");
  const int panel_size = panel_size_hint > 0 ? panel_size_hint : uniform_panel_size(data);
  return make_price_model(store, grid, NSParams{}, panel_size, cfg.hidden, bias, cfg.noise_guess);
}

void stamp_meta(Checkpoint& c, const RunConfig& cfg, int panel_size) {
  c.meta["model"] = cfg.model;
  c.meta["hidden"] = std::to_string(cfg.hidden);
  c.meta["noise_guess"] = std::to_string(cfg.noise_guess);
  if (panel_size > 0) c.meta["panel_size"] = std::to_string(panel_size);
}

// Applies checkpoint metadata (model kind and sizes) over the configured
// values so a checkpoint can be forecast without repeating the fit flags.
void absorb_meta(RunConfig& cfg, const Checkpoint& c) {
  if (c.meta.count("model")) cfg.model = c.meta.at("model");
  if (c.meta.count("hidden")) cfg.hidden = std::stoi(c.meta.at("hidden"));
  if (c.meta.count("noise_guess")) cfg.noise_guess = std::stod(c.meta.at("noise_guess"));
}

BnStats bn_from_checkpoint(const Checkpoint& c, int features) {
  BnStats bn = BnStats::fresh(features);
  if (c.has("bn.mean")) {
    const auto& m = c.get("bn.mean", {features});
    const auto& v = c.get("bn.var", {features});
    for (int i = 0; i < features; ++i) {
      bn.mean[i] = m[std::size_t(i)];
      bn.var[i] = v[std::size_t(i)];
    }
  }
  return bn;
}

int cmd_simulate(const RunConfig& cfg, const std::string& out_dir) {
  const Dataset ds = generate_synthetic(cfg.synthetic);
  save_dataset(out_dir, ds);
  save_run_config((fs::path(out_dir) / "config.json").string(), cfg);
  std::printf("wrote %d days to %s (yields%s%s)\n", ds.days(), out_dir.c_str(),
              ds.has_panels() ? ", bonds" : "", ds.has_truth ? ", truth" : "");
  return 0;
}

int cmd_fit(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
            const std::string& resume_path) {
  const Dataset data = load_data_checked(data_dir);
  fs::create_directories(out_dir);

  const SplitIndex split = make_split(data.days(), cfg.train.split);
  const FactorParams bias = head_bias_init(data, split.val_begin, NSParams{});
  ParamStore store;
  const ModelSpec model = build_model(store, cfg, data, &bias);
  const int panel_size = model.price_based ? model.clstm.positions : 0;

  Checkpoint resume;
  const bool resuming = !resume_path.empty();
  if (resuming) {
    if (!fs::exists(resume_path)) throw MissingArtifact("resume checkpoint not found: " + resume_path);
    resume = load_checkpoint(resume_path);
  }

  const std::string last_path = (fs::path(out_dir) / "last.ckpt").string();
  auto sink = [&](const Checkpoint& c, int epoch) {
    Checkpoint copy = c;
    stamp_meta(copy, cfg, panel_size);
    save_checkpoint(last_path, copy);
    (void)epoch;
  };

  const TrainResult result =
      train(data, model, store, cfg.train, resuming ? &resume : nullptr, sink);

  Checkpoint best;
  params_to_checkpoint(store, best);
  best.put("bn.mean", {result.bn.mean.size()},
           std::vector<double>(result.bn.mean.begin(), result.bn.mean.end()));
  best.put("bn.var", {result.bn.var.size()},
           std::vector<double>(result.bn.var.begin(), result.bn.var.end()));
  stamp_meta(best, cfg, panel_size);
  best.meta["best_epoch"] = std::to_string(result.best_epoch);
  save_checkpoint((fs::path(out_dir) / "best.ckpt").string(), best);
  write_history_csv((fs::path(out_dir) / "history.csv").string(), result.history);
  save_run_config((fs::path(out_dir) / "config.json").string(), cfg);
  std::printf("fit: %d epochs, best epoch %d, val loss %.6g; wrote %s\n", result.epochs_run,
              result.best_epoch, result.best_val, out_dir.c_str());
  return 0;
}

struct LoadedModel {
  ParamStore store;
  ModelSpec spec;
  BnStats bn = BnStats::fresh(1);
};

LoadedModel model_from_checkpoint(RunConfig& cfg, const Dataset& data,
                                  const std::string& ckpt_path) {
  if (!fs::exists(ckpt_path)) throw MissingArtifact("checkpoint not found: " + ckpt_path);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  absorb_meta(cfg, ckpt);
  const int panel_size =
      ckpt.meta.count("panel_size") ? std::stoi(ckpt.meta.at("panel_size")) : 0;
  LoadedModel m;
  m.spec = build_model(m.store, cfg, data, nullptr, panel_size);
  params_from_checkpoint(m.store, ckpt);
  m.bn = bn_from_checkpoint(ckpt, m.spec.res.features);
  return m;
}

int cmd_forecast(RunConfig cfg, const std::string& data_dir, const std::string& ckpt_path,
                 const std::string& out_dir) {
  const Dataset data = load_data_checked(data_dir);
  LoadedModel m = model_from_checkpoint(cfg, data, ckpt_path);
  const ForecastOutput out =
      run_filter_forecast(data, m.spec, m.store, m.bn, cfg.train, cfg.train.horizon);
  fs::create_directories(out_dir);
  write_forecast_csv((fs::path(out_dir) / "forecasts.csv").string(), out.rows);
  if (!out.ess.empty()) write_ess_csv((fs::path(out_dir) / "ess.csv").string(), out.ess);
  std::printf("forecast: %zu rows at horizon %d; wrote %s\n", out.rows.size(), cfg.train.horizon,
              out_dir.c_str());
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& data_dir, const std::string& forecasts,
             bool persistence, const std::string& name, const std::string& out_dir) {
  std::vector<ForecastRow> rows;
  std::string model_name = name;
  if (persistence) {
    const Dataset data = load_data_checked(data_dir);
    const SplitIndex split = make_split(data.days(), cfg.train.split);
    rows = persistence_forecast(data, cfg.train.horizon, split.test_begin, NSParams{});
    if (model_name.empty()) model_name = "persistence";
  } else {
    if (forecasts.empty()) throw UsageError("eval needs --forecasts FILE or --persistence");
    std::string path = forecasts;
    if (fs::is_directory(path)) path = (fs::path(path) / "forecasts.csv").string();
    if (!fs::exists(path)) throw MissingArtifact("forecast file not found: " + path);
    rows = load_forecast_csv(path);
    if (model_name.empty()) model_name = "model";
  }
  const EvalReport report = evaluate(rows, model_name, cfg.train.aer.weight);
  fs::create_directories(out_dir);
  write_report_json((fs::path(out_dir) / "report.json").string(), report);
  write_report_csv((fs::path(out_dir) / "report.csv").string(), report);
  for (const ReportEntry& e : report.entries)
    if (e.group == "all")
      std::printf("%s h=%d pooled MAE %.4f %s (n=%d)\n", e.kind.c_str(), e.horizon, e.stats.mae,
                  e.kind == "yield" ? "bp" : "$", e.stats.n);
  return 0;
}

int cmd_aer(RunConfig cfg, const std::string& data_dir, const std::string& ckpt_path,
            const std::string& out_dir) {
  const Dataset data = load_data_checked(data_dir);
  LoadedModel m = model_from_checkpoint(cfg, data, ckpt_path);
  const ForecastOutput out = run_filter_forecast(data, m.spec, m.store, m.bn, cfg.train, 0);
  const SplitIndex split = make_split(data.days(), cfg.train.split);

  std::vector<VecXd> tr_states, te_states;
  std::vector<FactorParams> tr_params, te_params;
  for (std::size_t i = 0; i < out.states.size(); ++i) {
    if (out.state_days[i] < split.test_begin) {
      tr_states.push_back(out.states[i]);
      tr_params.push_back(out.factors[i]);
    } else {
      te_states.push_back(out.states[i]);
      te_params.push_back(out.factors[i]);
    }
  }
  std::vector<AerReportRow> rows;
  if (!tr_states.empty()) {
    auto r = aer_report(tr_states, tr_params, cfg.train.aer, NSParams{}, "train");
    rows.insert(rows.end(), r.begin(), r.end());
  }
  if (!te_states.empty()) {
    auto r = aer_report(te_states, te_params, cfg.train.aer, NSParams{}, "test");
    rows.insert(rows.end(), r.begin(), r.end());
  }
  fs::create_directories(out_dir);
  write_aer_csv((fs::path(out_dir) / "aer.csv").string(), rows);
  if (!out.ess.empty()) write_ess_csv((fs::path(out_dir) / "ess.csv").string(), out.ess);
  if (!tr_states.empty())
    std::printf("train AER %.6g\n", aer_penalty(tr_states, tr_params, cfg.train.aer, NSParams{}));
  if (!te_states.empty())
    std::printf("test AER %.6g\n", aer_penalty(te_states, te_params, cfg.train.aer, NSParams{}));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Arbitrage-aware affine yield curve forecasting"};
  app.require_subcommand(1);

  Overrides ov;
  std::string out_dir, data_dir, ckpt_path, resume_path, forecasts_path, eval_name;
  bool persistence = false;

  CLI::App* sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
  add_common_options(sim, ov);
  sim->add_option("--out", out_dir, "Output directory");

  CLI::App* fit = app.add_subcommand("fit", "Train a model on a dataset");
  add_common_options(fit, ov);
  fit->add_option("--data", data_dir, "Dataset directory");
  fit->add_option("--out", out_dir, "Output directory for checkpoints/history");
  fit->add_option("--resume", resume_path, "Continue from a training checkpoint");

  CLI::App* fc = app.add_subcommand("forecast", "Filter a dataset and emit h-step predictions");
  add_common_options(fc, ov);
  fc->add_option("--data", data_dir, "Dataset directory");
  fc->add_option("--ckpt", ckpt_path, "Model checkpoint");
  fc->add_option("--out", out_dir, "Output directory");

  CLI::App* ev = app.add_subcommand("eval", "Score forecasts against observations");
  add_common_options(ev, ov);
  ev->add_option("--data", data_dir, "Dataset directory (for --persistence)");
  ev->add_option("--forecasts", forecasts_path, "forecasts.csv produced by `forecast`");
  ev->add_flag("--persistence", persistence, "Score the no-change benchmark instead");
  ev->add_option("--name", eval_name, "Model label in the report");
  ev->add_option("--out", out_dir, "Output directory");

  CLI::App* ar = app.add_subcommand("aer", "Report arbitrage-implied excess returns");
  add_common_options(ar, ov);
  ar->add_option("--data", data_dir, "Dataset directory");
  ar->add_option("--ckpt", ckpt_path, "Model checkpoint");
  ar->add_option("--out", out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg = effective_config(ov);
    const std::string out = !out_dir.empty() ? out_dir : (!cfg.out_dir.empty() ? cfg.out_dir : ".");
    if (sim->parsed()) return cmd_simulate(cfg, out);
    if (fit->parsed())
      return cmd_fit(cfg, pick(data_dir, cfg.data_dir, "data directory"), out, resume_path);
    if (fc->parsed())
      return cmd_forecast(cfg, pick(data_dir, cfg.data_dir, "data directory"),
                          pick(ckpt_path, cfg.checkpoint, "checkpoint"), out);
    if (ev->parsed())
      return cmd_eval(cfg, persistence ? pick(data_dir, cfg.data_dir, "data directory") : data_dir,
                      forecasts_path, persistence, eval_name, out);
    if (ar->parsed())
      return cmd_aer(cfg, pick(data_dir, cfg.data_dir, "data directory"),
                     pick(ckpt_path, cfg.checkpoint, "checkpoint"), out);
    return 1;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const MissingArtifact& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const NumericAbort& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 2;
  } catch (const ad::NonFiniteError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 2;
  } catch (const SingularMatrixError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
