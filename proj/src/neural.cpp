#include "afcurve/neural.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace afcurve {

int ParamStore::add(const std::string& name, std::vector<int> shape, InitSpec init) {
  if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
  int size = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("ParamStore: bad shape for " + name);
    size *= d;
  }
  ParamEntry e;
  e.name = name;
  e.shape = std::move(shape);
  e.offset = int(values_.size());
  e.size = size;
  e.init = init;
  index_[name] = int(entries_.size());
  entries_.push_back(e);
  values_.resize(values_.size() + std::size_t(size),
                 init.kind == InitSpec::kConstant ? init.value : 0.0);
  return int(entries_.size()) - 1;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

const ParamEntry& ParamStore::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
  return entries_[std::size_t(it->second)];
}

std::span<double> ParamStore::values(const std::string& name) {
  const ParamEntry& e = entry(name);
  return {values_.data() + e.offset, std::size_t(e.size)};
}

std::span<const double> ParamStore::values(const std::string& name) const {
  const ParamEntry& e = entry(name);
  return {values_.data() + e.offset, std::size_t(e.size)};
}

void ParamStore::initialize(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x1217ULL));
  for (const ParamEntry& e : entries_) {
    // Zero and constant entries are materialized by add(), and registration
    // code may overwrite them afterwards (data-driven head biases).  Only the
    // random fan-in scaled weights are drawn here.
    if (e.init.kind != InitSpec::kGlorot) continue;
    double* p = values_.data() + e.offset;
    const int first = e.shape[0];
    const int rest = e.size / first;
    const double r = std::sqrt(6.0 / double(first + rest));
    for (int i = 0; i < e.size; ++i) p[i] = rng.uniform(-r, r);
  }
}

LstmLayout register_lstm(ParamStore& store, const std::string& prefix, int input, int hidden) {
  if (input <= 0 || hidden <= 0)
    throw std::invalid_argument("register_lstm: sizes must be positive");
  for (const char* g : {"f", "i", "o", "g"}) {
    store.add(prefix + ".W" + g, {hidden, input}, InitSpec::glorot());
    store.add(prefix + ".R" + g, {hidden, hidden}, InitSpec::glorot());
    // Unit forget bias keeps early memory open, the usual LSTM default.
    store.add(prefix + ".b" + g, {hidden},
              g[0] == 'f' ? InitSpec::constant(1.0) : InitSpec::zero());
  }
  return LstmLayout{prefix, input, hidden};
}

int conv_output_size(int n, int kernel, int stride, int pad) {
  if (n <= 0 || kernel <= 0 || stride <= 0 || pad < 0)
    throw std::invalid_argument("conv_output_size: invalid geometry");
  if (kernel > n + 2 * pad)
    throw std::invalid_argument("conv_output_size: kernel larger than padded input");
  return (n + 2 * pad - kernel) / stride + 1;
}

ClstmLayout register_clstm(ParamStore& store, const std::string& prefix, int positions,
                           int features, int hidden) {
  if (positions < hidden)
    throw std::invalid_argument("register_clstm: need at least `hidden` input positions");
  if (features <= 0) throw std::invalid_argument("register_clstm: features must be positive");
  ClstmLayout l;
  l.prefix = prefix;
  l.positions = positions;
  l.features = features;
  l.hidden = hidden;
  l.stride_w = positions / hidden;
  l.kernel_w = positions - (hidden - 1) * l.stride_w;
  if (conv_output_size(positions, l.kernel_w, l.stride_w, 0) != hidden)
    throw std::invalid_argument("register_clstm: geometry does not produce `hidden` outputs");
  for (const char* g : {"f", "i", "o", "g"}) {
    store.add(prefix + ".W" + g, {l.kernel_w, features}, InitSpec::glorot());
    store.add(prefix + ".R" + g, {l.rec_kernel}, InitSpec::zero());
    store.add(prefix + ".b" + g, {hidden},
              g[0] == 'f' ? InitSpec::constant(1.0) : InitSpec::zero());
  }
  return l;
}

namespace {
double atanh_clamped(double ratio) {
  const double r = std::clamp(ratio, -0.995, 0.995);
  return std::atanh(r);
}
}  // namespace

StateHeadLayout register_state_head(ParamStore& store, const std::string& prefix, int hidden,
                                    const FactorParams* bias_init) {
  StateHeadLayout l;
  l.prefix = prefix;
  l.hidden = hidden;
  store.add(prefix + ".Wk", {hidden, kStateDim, kStateDim}, InitSpec::glorot());
  store.add(prefix + ".bk", {kStateDim, kStateDim}, InitSpec::zero());
  store.add(prefix + ".Wth", {hidden, kStateDim}, InitSpec::glorot());
  store.add(prefix + ".bth", {kStateDim}, InitSpec::zero());
  store.add(prefix + ".Wsg", {hidden, kStateDim, kStateDim}, InitSpec::glorot());
  store.add(prefix + ".bsg", {kStateDim, kStateDim}, InitSpec::zero());
  if (bias_init) {
    auto bk = store.values(prefix + ".bk");
    auto bth = store.values(prefix + ".bth");
    auto bsg = store.values(prefix + ".bsg");
    for (int j = 0; j < kStateDim; ++j) {
      bth[std::size_t(j)] = atanh_clamped(bias_init->theta[j] / l.theta_scale);
      for (int k = 0; k < kStateDim; ++k) {
        bk[std::size_t(j * kStateDim + k)] = bias_init->kappa(j, k);
        bsg[std::size_t(j * kStateDim + k)] =
            atanh_clamped(bias_init->sigma(j, k) / l.sigma_scale);
      }
    }
  }
  return l;
}

ResidualHeadLayout register_residual_head(ParamStore& store, const std::string& prefix,
                                          int features, int hidden, double initial_scale) {
  ResidualHeadLayout l;
  l.prefix = prefix;
  l.features = features;
  l.hidden = hidden;
  l.lstm = register_lstm(store, prefix + ".lstm", features, hidden);
  store.add(prefix + ".Wd", {features, hidden}, InitSpec::glorot());
  // Bias so the head starts at a sensible noise scale instead of softplus(0).
  const double target = std::max(initial_scale - l.noise_floor, 1e-8);
  const double bias = target > 20.0 ? target : std::log(std::expm1(target));
  store.add(prefix + ".bd", {features}, InitSpec::constant(bias));
  return l;
}

GradResult grad(std::span<const double> params,
                const std::function<ad::Var(std::span<const ad::Var>)>& loss) {
  ad::Tape tape;
  tape.reserve(params.size() * 2 + 4096);
  ad::TapeScope scope(tape);
  std::vector<ad::Var> vars;
  vars.reserve(params.size());
  for (double p : params) vars.push_back(ad::Var(p));
  const ad::Var l = loss(vars);
  const std::vector<double> adj = tape.backward(l.idx);
  GradResult r;
  r.value = l.value();
  r.grad.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) r.grad[i] = adj[std::size_t(vars[i].idx)];
  return r;
}

void Checkpoint::put(const std::string& name, std::vector<int> shape,
                     std::vector<double> data) {
  std::size_t n = 1;
  for (int d : shape) n *= std::size_t(d);
  if (n != data.size())
    throw std::invalid_argument("Checkpoint: shape/data mismatch for " + name);
  arrays[name] = {std::move(shape), std::move(data)};
}

const std::vector<double>& Checkpoint::get(const std::string& name,
                                           const std::vector<int>& shape) const {
  auto it = arrays.find(name);
  if (it == arrays.end())
    throw std::runtime_error("Checkpoint: missing array '" + name + "'");
  if (it->second.first != shape)
    throw std::runtime_error("Checkpoint: shape mismatch for array '" + name + "'");
  return it->second.second;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json j;
  j["version"] = ckpt.version;
  j["meta"] = ckpt.meta;
  nlohmann::json arrays = nlohmann::json::object();
  for (const auto& [name, sd] : ckpt.arrays) {
    arrays[name] = {{"shape", sd.first}, {"data", sd.second}};
  }
  j["arrays"] = std::move(arrays);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << j.dump();
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  in >> j;
  Checkpoint c;
  c.version = j.at("version").get<int>();
  if (c.version != 1)
    throw std::runtime_error("load_checkpoint: unsupported version in " + path);
  if (j.contains("meta"))
    c.meta = j.at("meta").get<std::map<std::string, std::string>>();
  for (const auto& [name, arr] : j.at("arrays").items()) {
    c.put(name, arr.at("shape").get<std::vector<int>>(),
          arr.at("data").get<std::vector<double>>());
  }
  return c;
}

void params_to_checkpoint(const ParamStore& store, Checkpoint& ckpt, const std::string& prefix) {
  for (const ParamEntry& e : store.entries()) {
    auto v = store.values(e.name);
    ckpt.put(prefix + e.name, e.shape, std::vector<double>(v.begin(), v.end()));
  }
}

void params_from_checkpoint(ParamStore& store, const Checkpoint& ckpt,
                            const std::string& prefix) {
  for (const ParamEntry& e : store.entries()) {
    const auto& data = ckpt.get(prefix + e.name, e.shape);
    auto v = store.values(e.name);
    std::copy(data.begin(), data.end(), v.begin());
  }
}

}  // namespace afcurve
