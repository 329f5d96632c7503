#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "afcurve/ad.hpp"
#include "afcurve/dynamics.hpp"
#include "afcurve/linalg.hpp"
#include "afcurve/rng.hpp"

// Recurrent building blocks that drive the day-by-day factor dynamics, plus
// the flat parameter store the optimizer and checkpoints operate on.  All
// cells are templated on the scalar so the same code runs numerically and on
// the autodiff tape.

namespace afcurve {

struct InitSpec {
  enum Kind { kZero, kConstant, kGlorot } kind = kZero;
  double value = 0.0;  // for kConstant

  static InitSpec zero() { return {kZero, 0.0}; }
  static InitSpec constant(double v) { return {kConstant, v}; }
  static InitSpec glorot() { return {kGlorot, 0.0}; }
};

struct ParamEntry {
  std::string name;
  std::vector<int> shape;
  int offset = 0;
  int size = 0;
  InitSpec init;
};

class ParamStore {
 public:
  int add(const std::string& name, std::vector<int> shape, InitSpec init = InitSpec::zero());
  bool has(const std::string& name) const;
  const ParamEntry& entry(const std::string& name) const;
  const std::vector<ParamEntry>& entries() const { return entries_; }

  std::span<double> values(const std::string& name);
  std::span<const double> values(const std::string& name) const;
  std::vector<double>& flat() { return values_; }
  const std::vector<double>& flat() const { return values_; }
  int size() const { return int(values_.size()); }

  // Draws every glorot-initialized entry; deterministic in the seed and the
  // registration order.  Zero and constant entries are already materialized
  // by add() and are left untouched, so bias values written directly after
  // registration survive this call.
  void initialize(std::uint64_t seed);

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, int> index_;
  std::vector<double> values_;
};

// Read-only view of a flat parameter vector (double or tape scalars) using a
// ParamStore for the layout.
template <class T>
struct ParamsView {
  const ParamStore* layout = nullptr;
  std::span<const T> flat;

  std::span<const T> get(const std::string& name) const {
    const ParamEntry& e = layout->entry(name);
    return flat.subspan(std::size_t(e.offset), std::size_t(e.size));
  }
};

// --- LSTM -------------------------------------------------------------------

struct LstmLayout {
  std::string prefix;
  int input = 0;
  int hidden = 0;
};

// Registers W* (hidden x input), R* (hidden x hidden) and b* (hidden) for the
// four gates f, i, o and the candidate g.  Forget-gate bias starts at 1.
LstmLayout register_lstm(ParamStore& store, const std::string& prefix, int input, int hidden);

template <class T>
struct LstmState {
  VecX<T> h, c;
};

template <class T>
LstmState<T> lstm_zero_state(int hidden) {
  LstmState<T> s;
  s.h = zeros_vec<T>(hidden);
  s.c = zeros_vec<T>(hidden);
  return s;
}

namespace detail {
template <class T>
VecX<T> affine_gate(const ParamsView<T>& pv, const std::string& w_name,
                    const std::string& r_name, const std::string& b_name, const VecX<T>& x,
                    const VecX<T>& h, int hidden, int input) {
  const auto w = pv.get(w_name);
  const auto r = pv.get(r_name);
  const auto b = pv.get(b_name);
  VecX<T> out(hidden);
  for (int i = 0; i < hidden; ++i) {
    T s = b[std::size_t(i)];
    for (int j = 0; j < input; ++j) s = s + w[std::size_t(i * input + j)] * x[j];
    for (int j = 0; j < hidden; ++j) s = s + r[std::size_t(i * hidden + j)] * h[j];
    out[i] = s;
  }
  return out;
}
}  // namespace detail

// f = sig(Wf x + Rf h + bf), i = sig(.), o = sig(.), g = tanh(.);
// c = f * c_prev + i * g;  h = o * tanh(c).
template <class T>
LstmState<T> lstm_cell(const ParamsView<T>& pv, const LstmLayout& l, const VecX<T>& x,
                       const LstmState<T>& prev) {
  using std::tanh;
  if (x.size() != l.input)
    throw std::invalid_argument("lstm_cell: input size mismatch for " + l.prefix);
  const VecX<T> f = detail::affine_gate(pv, l.prefix + ".Wf", l.prefix + ".Rf",
                                        l.prefix + ".bf", x, prev.h, l.hidden, l.input);
  const VecX<T> i = detail::affine_gate(pv, l.prefix + ".Wi", l.prefix + ".Ri",
                                        l.prefix + ".bi", x, prev.h, l.hidden, l.input);
  const VecX<T> o = detail::affine_gate(pv, l.prefix + ".Wo", l.prefix + ".Ro",
                                        l.prefix + ".bo", x, prev.h, l.hidden, l.input);
  const VecX<T> g = detail::affine_gate(pv, l.prefix + ".Wg", l.prefix + ".Rg",
                                        l.prefix + ".bg", x, prev.h, l.hidden, l.input);
  LstmState<T> next;
  next.c = VecX<T>(l.hidden);
  next.h = VecX<T>(l.hidden);
  for (int k = 0; k < l.hidden; ++k) {
    const T ck = sigmoid(f[k]) * prev.c[k] + sigmoid(i[k]) * tanh(g[k]);
    next.c[k] = ck;
    next.h[k] = sigmoid(o[k]) * tanh(ck);
  }
  return next;
}

// --- convolutional LSTM -------------------------------------------------------

// floor((n + 2 pad - kernel)/stride) + 1; throws when the geometry is invalid.
int conv_output_size(int n, int kernel, int stride, int pad);

struct ClstmLayout {
  std::string prefix;
  int positions = 0;   // N input rows (e.g. bonds per day)
  int features = 0;    // F input columns per row
  int hidden = 0;      // H output positions
  int kernel_w = 0;
  int stride_w = 0;
  int rec_kernel = 3;  // same-padded conv width on the recurrent path
};

// The input kernel spans the full feature width (K_H = F) and the width
// geometry is chosen so the gate output has exactly `hidden` positions:
// stride = floor(N/H), kernel = N - (H-1) stride.  The recurrent term is a
// width-3 same-padded single-channel convolution over the H positions.
ClstmLayout register_clstm(ParamStore& store, const std::string& prefix, int positions,
                           int features, int hidden);

template <class T>
LstmState<T> clstm_cell(const ParamsView<T>& pv, const ClstmLayout& l, const MatX<T>& x,
                        const LstmState<T>& prev) {
  using std::tanh;
  if (x.rows() != l.positions || x.cols() != l.features)
    throw std::invalid_argument("clstm_cell: input shape mismatch for " + l.prefix);
  auto gate = [&](const char* g) {
    const auto w = pv.get(l.prefix + ".W" + g);   // kernel_w x features
    const auto r = pv.get(l.prefix + ".R" + g);   // rec_kernel
    const auto b = pv.get(l.prefix + ".b" + g);   // hidden
    VecX<T> out(l.hidden);
    const int half = l.rec_kernel / 2;
    for (int o = 0; o < l.hidden; ++o) {
      T s = b[std::size_t(o)];
      const int base = o * l.stride_w;
      for (int a = 0; a < l.kernel_w; ++a)
        for (int c = 0; c < l.features; ++c)
          s = s + w[std::size_t(a * l.features + c)] * x(base + a, c);
      for (int d = -half; d <= half; ++d) {
        const int src = o + d;
        if (src >= 0 && src < l.hidden)
          s = s + r[std::size_t(d + half)] * prev.h[src];
      }
      out[o] = s;
    }
    return out;
  };
  const VecX<T> f = gate("f");
  const VecX<T> i = gate("i");
  const VecX<T> o = gate("o");
  const VecX<T> g = gate("g");
  LstmState<T> next;
  next.c = VecX<T>(l.hidden);
  next.h = VecX<T>(l.hidden);
  for (int k = 0; k < l.hidden; ++k) {
    const T ck = sigmoid(f[k]) * prev.c[k] + sigmoid(i[k]) * tanh(g[k]);
    next.c[k] = ck;
    next.h[k] = sigmoid(o[k]) * tanh(ck);
  }
  return next;
}

// --- parameter heads ----------------------------------------------------------

struct StateHeadLayout {
  std::string prefix;
  int hidden = 0;
  double theta_scale = 0.05;
  double sigma_scale = 0.05;
};

// kappa = Wk . c + bk (identity activation, unbounded);
// theta = theta_scale * tanh(Wth . c + bth);
// sigma = sigma_scale * tanh(Wsg . c + bsg).
StateHeadLayout register_state_head(ParamStore& store, const std::string& prefix, int hidden,
                                    const FactorParams* bias_init = nullptr);

template <class T>
FactorParamsT<T> state_head(const ParamsView<T>& pv, const StateHeadLayout& l,
                            const VecX<T>& c) {
  using std::tanh;
  const auto wk = pv.get(l.prefix + ".Wk");
  const auto bk = pv.get(l.prefix + ".bk");
  const auto wth = pv.get(l.prefix + ".Wth");
  const auto bth = pv.get(l.prefix + ".bth");
  const auto wsg = pv.get(l.prefix + ".Wsg");
  const auto bsg = pv.get(l.prefix + ".bsg");
  FactorParamsT<T> out;
  out.kappa = MatX<T>(kStateDim, kStateDim);
  out.sigma = MatX<T>(kStateDim, kStateDim);
  out.theta = VecX<T>(kStateDim);
  for (int j = 0; j < kStateDim; ++j) {
    for (int k = 0; k < kStateDim; ++k) {
      const int flat_jk = j * kStateDim + k;
      T sk = bk[std::size_t(flat_jk)];
      T ss = bsg[std::size_t(flat_jk)];
      for (int h = 0; h < l.hidden; ++h) {
        sk = sk + wk[std::size_t(h * kStateDim * kStateDim + flat_jk)] * c[h];
        ss = ss + wsg[std::size_t(h * kStateDim * kStateDim + flat_jk)] * c[h];
      }
      out.kappa(j, k) = sk;
      out.sigma(j, k) = tanh(ss) * l.sigma_scale;
    }
    T st = bth[std::size_t(j)];
    for (int h = 0; h < l.hidden; ++h)
      st = st + wth[std::size_t(h * kStateDim + j)] * c[h];
    out.theta[j] = tanh(st) * l.theta_scale;
  }
  return out;
}

// --- residual head --------------------------------------------------------------

struct ResidualHeadLayout {
  std::string prefix;
  int features = 0;  // grid size the residuals are aggregated on
  int hidden = 0;
  double noise_floor = 1e-4;
  LstmLayout lstm;
};

ResidualHeadLayout register_residual_head(ParamStore& store, const std::string& prefix,
                                          int features, int hidden, double initial_scale);

// Streaming normalization statistics (momentum 0.9).  Stored outside the
// parameter vector; gradients do not flow through them.
struct BnStats {
  VecXd mean, var;
  double momentum = 0.9;
  double eps = 1e-5;

  static BnStats fresh(int features) {
    BnStats s;
    s.mean = zeros_vec<double>(features);
    s.var = VecXd(features);
    for (int i = 0; i < features; ++i) s.var[i] = 1.0;
    return s;
  }
};

// One step of u = dense(LSTM(batchnorm(e))); returns the diagonal of U:
// U_ii = (softplus(u_i) + floor)^2.  In training mode the running statistics
// are updated with the detached inputs; in inference mode the map is a fixed
// deterministic function.
template <class T>
VecX<T> residual_head_step(const ParamsView<T>& pv, const ResidualHeadLayout& l,
                           const VecX<T>& e_abs, BnStats& bn, bool training,
                           LstmState<T>& lstm_state) {
  if (e_abs.size() != l.features)
    throw std::invalid_argument("residual_head_step: feature size mismatch");
  if (training) {
    for (int i = 0; i < l.features; ++i) {
      const double v = value_of(e_abs[i]);
      bn.mean[i] = bn.momentum * bn.mean[i] + (1.0 - bn.momentum) * v;
      const double d = v - bn.mean[i];
      bn.var[i] = bn.momentum * bn.var[i] + (1.0 - bn.momentum) * d * d;
    }
  }
  VecX<T> norm(l.features);
  for (int i = 0; i < l.features; ++i)
    norm[i] = (e_abs[i] - bn.mean[i]) * (1.0 / std::sqrt(bn.var[i] + bn.eps));
  lstm_state = lstm_cell(pv, l.lstm, norm, lstm_state);
  const auto wd = pv.get(l.prefix + ".Wd");
  const auto bd = pv.get(l.prefix + ".bd");
  VecX<T> u(l.features);
  for (int i = 0; i < l.features; ++i) {
    T s = bd[std::size_t(i)];
    for (int h = 0; h < l.hidden; ++h) s = s + wd[std::size_t(i * l.hidden + h)] * lstm_state.h[h];
    const T sd = softplus(s) + l.noise_floor;
    u[i] = sd * sd;
  }
  return u;
}

// --- gradient driver -------------------------------------------------------------

struct GradResult {
  double value = 0.0;
  std::vector<double> grad;
};

// Reverse-mode gradient of a scalar loss with respect to every parameter.
GradResult grad(std::span<const double> params,
                const std::function<ad::Var(std::span<const ad::Var>)>& loss);

// --- checkpoints -----------------------------------------------------------------

struct Checkpoint {
  int version = 1;
  std::map<std::string, std::pair<std::vector<int>, std::vector<double>>> arrays;
  std::map<std::string, std::string> meta;

  void put(const std::string& name, std::vector<int> shape, std::vector<double> data);
  // Shape-checked fetch; throws with the offending name.
  const std::vector<double>& get(const std::string& name, const std::vector<int>& shape) const;
  bool has(const std::string& name) const { return arrays.count(name) > 0; }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

void params_to_checkpoint(const ParamStore& store, Checkpoint& ckpt,
                          const std::string& prefix = "param.");
void params_from_checkpoint(ParamStore& store, const Checkpoint& ckpt,
                            const std::string& prefix = "param.");

}  // namespace afcurve
