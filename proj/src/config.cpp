#include "afcurve/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace afcurve {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& origin, const std::string& msg) {
  throw std::runtime_error(origin + ": " + msg);
}

void check_keys(const json& j, const std::string& origin, const std::string& section,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(origin, section + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        known = true;
        break;
      }
    if (!known) fail(origin, "unknown key '" + item.key() + "' in " + section);
  }
}

double get_num(const json& j, const std::string& origin, const std::string& name) {
  if (!j.is_number()) fail(origin, name + " must be a number");
  return j.get<double>();
}

int get_int(const json& j, const std::string& origin, const std::string& name) {
  if (!j.is_number_integer()) fail(origin, name + " must be an integer");
  return j.get<int>();
}

std::uint64_t get_seed(const json& j, const std::string& origin, const std::string& name) {
  if (!j.is_number_unsigned() && !j.is_number_integer()) fail(origin, name + " must be an integer");
  if (j.is_number_integer() && j.get<long long>() < 0) fail(origin, name + " must be >= 0");
  return j.get<std::uint64_t>();
}

bool get_bool(const json& j, const std::string& origin, const std::string& name) {
  if (!j.is_boolean()) fail(origin, name + " must be a boolean");
  return j.get<bool>();
}

std::string get_str(const json& j, const std::string& origin, const std::string& name) {
  if (!j.is_string()) fail(origin, name + " must be a string");
  return j.get<std::string>();
}

VecXd get_vec3(const json& j, const std::string& origin, const std::string& name) {
  if (!j.is_array() || j.size() != 3) fail(origin, name + " must be an array of 3 numbers");
  VecXd v(3);
  for (int i = 0; i < 3; ++i) v[i] = get_num(j[std::size_t(i)], origin, name + " entry");
  return v;
}

MatXd get_mat3(const json& j, const std::string& origin, const std::string& name) {
  if (!j.is_array() || j.size() != 3) fail(origin, name + " must be a 3x3 array of numbers");
  MatXd m(3, 3);
  for (int r = 0; r < 3; ++r) {
    const json& row = j[std::size_t(r)];
    if (!row.is_array() || row.size() != 3) fail(origin, name + " must be a 3x3 array of numbers");
    for (int c = 0; c < 3; ++c) m(r, c) = get_num(row[std::size_t(c)], origin, name + " entry");
  }
  return m;
}

FactorParams apply_param_overrides(const json& j, const std::string& origin,
                                   const std::string& section, FactorParams base) {
  if (j.contains("kappa")) base.kappa = get_mat3(j["kappa"], origin, section + ".kappa");
  if (j.contains("theta")) base.theta = get_vec3(j["theta"], origin, section + ".theta");
  if (j.contains("sigma")) base.sigma = get_mat3(j["sigma"], origin, section + ".sigma");
  return base;
}

void parse_synthetic(const json& j, const std::string& origin, SyntheticConfig& out) {
  check_keys(j, origin, "synthetic",
             {"days", "regime", "kappa", "theta", "sigma", "x0", "yield_noise_sd",
              "price_noise_sd", "bucket_sizes", "seed", "with_bonds", "schedule"});
  if (j.contains("regime")) {
    const std::string r = get_str(j["regime"], origin, "synthetic.regime");
    if (r == "mid")
      out.params = SyntheticConfig::defaults().params;
    else if (r == "fast")
      out.params = SyntheticConfig::fast_reversion().params;
    else if (r == "slow")
      out.params = SyntheticConfig::slow_reversion().params;
    else
      fail(origin, "synthetic.regime must be 'mid', 'fast' or 'slow'");
  }
  out.params = apply_param_overrides(j, origin, "synthetic", out.params);
  if (j.contains("days")) out.days = get_int(j["days"], origin, "synthetic.days");
  if (j.contains("x0")) out.x0 = get_vec3(j["x0"], origin, "synthetic.x0");
  if (j.contains("yield_noise_sd"))
    out.yield_noise_sd = get_num(j["yield_noise_sd"], origin, "synthetic.yield_noise_sd");
  if (j.contains("price_noise_sd"))
    out.price_noise_sd = get_num(j["price_noise_sd"], origin, "synthetic.price_noise_sd");
  if (j.contains("bucket_sizes")) {
    const json& b = j["bucket_sizes"];
    if (!b.is_array() || b.size() != 3)
      fail(origin, "synthetic.bucket_sizes must be an array of 3 integers");
    for (int i = 0; i < 3; ++i)
      out.bucket_sizes[std::size_t(i)] =
          get_int(b[std::size_t(i)], origin, "synthetic.bucket_sizes entry");
  }
  if (j.contains("seed")) out.seed = get_seed(j["seed"], origin, "synthetic.seed");
  if (j.contains("with_bonds")) out.with_bonds = get_bool(j["with_bonds"], origin, "synthetic.with_bonds");
  if (j.contains("schedule")) {
    const json& s = j["schedule"];
    if (!s.is_array()) fail(origin, "synthetic.schedule must be an array");
    out.schedule.clear();
    int prev_day = -1;
    for (const json& e : s) {
      check_keys(e, origin, "synthetic.schedule entry", {"day", "kappa", "theta", "sigma"});
      if (!e.contains("day")) fail(origin, "synthetic.schedule entry needs a 'day'");
      const int day = get_int(e["day"], origin, "synthetic.schedule day");
      if (day <= prev_day) fail(origin, "synthetic.schedule days must increase");
      prev_day = day;
      out.schedule.emplace_back(
          day, apply_param_overrides(e, origin, "synthetic.schedule entry", out.params));
    }
  }
}

void parse_train(const json& j, const std::string& origin, TrainConfig& out) {
  check_keys(j, origin, "train",
             {"lambda", "aer_p", "horizon", "epochs", "lr", "lr_decay", "patience", "seed",
              "filter", "noise_mode", "fixed_noise_sd", "particles", "mggd_p", "mggd_m",
              "resample", "train_fraction", "val_fraction", "seq_len"});
  if (j.contains("lambda")) out.aer.weight = get_num(j["lambda"], origin, "train.lambda");
  if (j.contains("aer_p")) out.aer.p = get_num(j["aer_p"], origin, "train.aer_p");
  if (j.contains("horizon")) out.horizon = get_int(j["horizon"], origin, "train.horizon");
  if (j.contains("epochs")) out.epochs = get_int(j["epochs"], origin, "train.epochs");
  if (j.contains("lr")) out.lr = get_num(j["lr"], origin, "train.lr");
  if (j.contains("lr_decay")) out.lr_decay = get_num(j["lr_decay"], origin, "train.lr_decay");
  if (j.contains("patience")) out.patience = get_int(j["patience"], origin, "train.patience");
  if (j.contains("seed")) out.seed = get_seed(j["seed"], origin, "train.seed");
  if (j.contains("filter")) {
    const std::string f = get_str(j["filter"], origin, "train.filter");
    if (f == "kf")
      out.filter = FilterKind::kKF;
    else if (f == "ekf")
      out.filter = FilterKind::kEKF;
    else if (f == "pf")
      out.filter = FilterKind::kPF;
    else
      fail(origin, "train.filter must be 'kf', 'ekf' or 'pf'");
  }
  if (j.contains("noise_mode")) {
    const std::string m = get_str(j["noise_mode"], origin, "train.noise_mode");
    if (m == "fixed")
      out.noise_mode = ObsNoiseMode::kFixed;
    else if (m == "residual")
      out.noise_mode = ObsNoiseMode::kResidualHead;
    else
      fail(origin, "train.noise_mode must be 'fixed' or 'residual'");
  }
  if (j.contains("fixed_noise_sd"))
    out.fixed_noise_sd = get_num(j["fixed_noise_sd"], origin, "train.fixed_noise_sd");
  if (j.contains("particles")) out.particles = get_int(j["particles"], origin, "train.particles");
  if (j.contains("mggd_p")) out.mggd_p = get_num(j["mggd_p"], origin, "train.mggd_p");
  if (j.contains("mggd_m")) out.mggd_m = get_num(j["mggd_m"], origin, "train.mggd_m");
  if (j.contains("resample")) {
    const std::string r = get_str(j["resample"], origin, "train.resample");
    if (r == "every")
      out.resample = ResamplePolicy::kEveryStep;
    else if (r == "adaptive")
      out.resample = ResamplePolicy::kAdaptive;
    else
      fail(origin, "train.resample must be 'every' or 'adaptive'");
  }
  if (j.contains("train_fraction"))
    out.split.train_fraction = get_num(j["train_fraction"], origin, "train.train_fraction");
  if (j.contains("val_fraction"))
    out.split.val_fraction = get_num(j["val_fraction"], origin, "train.val_fraction");
  if (j.contains("seq_len")) out.split.seq_len = get_int(j["seq_len"], origin, "train.seq_len");
}

json mat3_to_json(const MatXd& m) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) {
    json row = json::array();
    for (int c = 0; c < 3; ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vec3_to_json(const VecXd& v) {
  json a = json::array();
  for (int i = 0; i < 3; ++i) a.push_back(v[i]);
  return a;
}

}  // namespace

void RunConfig::validate() const {
  if (model != "yield" && model != "price")
    throw std::runtime_error("RunConfig: model must be 'yield' or 'price'");
  if (hidden < 1) throw std::runtime_error("RunConfig: hidden must be >= 1");
  if (!(noise_guess > 0.0)) throw std::runtime_error("RunConfig: noise_guess must be positive");
  if (synthetic.days < 2) throw std::runtime_error("RunConfig: synthetic.days must be >= 2");
  train.validate();
}

RunConfig parse_run_config(const std::string& json_text, const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(origin, std::string("invalid JSON: ") + e.what());
  }
  check_keys(j, origin, "document",
             {"seed", "model", "hidden", "noise_guess", "synthetic", "train", "paths"});
  RunConfig cfg;
  if (j.contains("seed")) {
    cfg.seed = get_seed(j["seed"], origin, "seed");
    cfg.synthetic.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
  }
  if (j.contains("model")) cfg.model = get_str(j["model"], origin, "model");
  if (j.contains("hidden")) cfg.hidden = get_int(j["hidden"], origin, "hidden");
  if (j.contains("noise_guess")) cfg.noise_guess = get_num(j["noise_guess"], origin, "noise_guess");
  if (j.contains("synthetic")) parse_synthetic(j["synthetic"], origin, cfg.synthetic);
  if (j.contains("train")) parse_train(j["train"], origin, cfg.train);
  if (j.contains("paths")) {
    const json& p = j["paths"];
    check_keys(p, origin, "paths", {"data_dir", "out_dir", "checkpoint"});
    if (p.contains("data_dir")) cfg.data_dir = get_str(p["data_dir"], origin, "paths.data_dir");
    if (p.contains("out_dir")) cfg.out_dir = get_str(p["out_dir"], origin, "paths.out_dir");
    if (p.contains("checkpoint"))
      cfg.checkpoint = get_str(p["checkpoint"], origin, "paths.checkpoint");
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_run_config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path);
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["model"] = cfg.model;
  j["hidden"] = cfg.hidden;
  j["noise_guess"] = cfg.noise_guess;
  json s;
  s["days"] = cfg.synthetic.days;
  s["kappa"] = mat3_to_json(cfg.synthetic.params.kappa);
  s["theta"] = vec3_to_json(cfg.synthetic.params.theta);
  s["sigma"] = mat3_to_json(cfg.synthetic.params.sigma);
  if (cfg.synthetic.x0.size() == 3) s["x0"] = vec3_to_json(cfg.synthetic.x0);
  s["yield_noise_sd"] = cfg.synthetic.yield_noise_sd;
  s["price_noise_sd"] = cfg.synthetic.price_noise_sd;
  s["bucket_sizes"] = {cfg.synthetic.bucket_sizes[0], cfg.synthetic.bucket_sizes[1],
                       cfg.synthetic.bucket_sizes[2]};
  s["seed"] = cfg.synthetic.seed;
  s["with_bonds"] = cfg.synthetic.with_bonds;
  if (!cfg.synthetic.schedule.empty()) {
    json arr = json::array();
    for (const auto& [day, params] : cfg.synthetic.schedule) {
      json e;
      e["day"] = day;
      e["kappa"] = mat3_to_json(params.kappa);
      e["theta"] = vec3_to_json(params.theta);
      e["sigma"] = mat3_to_json(params.sigma);
      arr.push_back(std::move(e));
    }
    s["schedule"] = std::move(arr);
  }
  j["synthetic"] = std::move(s);
  json t;
  t["lambda"] = cfg.train.aer.weight;
  t["aer_p"] = cfg.train.aer.p;
  t["horizon"] = cfg.train.horizon;
  t["epochs"] = cfg.train.epochs;
  t["lr"] = cfg.train.lr;
  t["lr_decay"] = cfg.train.lr_decay;
  t["patience"] = cfg.train.patience;
  t["seed"] = cfg.train.seed;
  t["filter"] = cfg.train.filter == FilterKind::kKF
                    ? "kf"
                    : (cfg.train.filter == FilterKind::kEKF ? "ekf" : "pf");
  t["noise_mode"] = cfg.train.noise_mode == ObsNoiseMode::kFixed ? "fixed" : "residual";
  t["fixed_noise_sd"] = cfg.train.fixed_noise_sd;
  t["particles"] = cfg.train.particles;
  t["mggd_p"] = cfg.train.mggd_p;
  t["mggd_m"] = cfg.train.mggd_m;
  t["resample"] = cfg.train.resample == ResamplePolicy::kEveryStep ? "every" : "adaptive";
  t["train_fraction"] = cfg.train.split.train_fraction;
  t["val_fraction"] = cfg.train.split.val_fraction;
  t["seq_len"] = cfg.train.split.seq_len;
  j["train"] = std::move(t);
  if (!cfg.data_dir.empty() || !cfg.out_dir.empty() || !cfg.checkpoint.empty()) {
    json p;
    if (!cfg.data_dir.empty()) p["data_dir"] = cfg.data_dir;
    if (!cfg.out_dir.empty()) p["out_dir"] = cfg.out_dir;
    if (!cfg.checkpoint.empty()) p["checkpoint"] = cfg.checkpoint;
    j["paths"] = std::move(p);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_run_config: cannot open " + path);
  out << j.dump(2) << '\n';
}

}  // namespace afcurve
