#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

// Reverse-mode autodiff on a flat scalar tape.
//
// Every arithmetic operation on Var appends one node carrying the local
// partial derivatives with respect to its (at most two) parents.  A single
// reverse sweep over the tape then accumulates adjoints for all nodes.
// Tapes are cheap to reuse: record, backward(), clear(), repeat.  Each thread
// must install its own tape with TapeScope before recording; independent
// tapes on different threads do not interact.

namespace afcurve::ad {

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const char* op, std::size_t index, double value)
      : std::runtime_error("non-finite value in op '" + std::string(op) +
                           "' at tape node " + std::to_string(index) +
                           " (value=" + std::to_string(value) + ")"),
        op_name(op),
        node_index(index) {}
  const char* op_name;
  std::size_t node_index;
};

class Tape {
 public:
  struct Node {
    double val;
    double da;
    double db;
    std::int32_t pa;
    std::int32_t pb;
  };

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }
  double value(std::int32_t i) const { return nodes_[std::size_t(i)].val; }

  std::int32_t push(double v, std::int32_t pa, double da, std::int32_t pb,
                    double db, const char* op) {
    if (!std::isfinite(v)) throw NonFiniteError(op, nodes_.size(), v);
    nodes_.push_back(Node{v, da, db, pa, pb});
    return std::int32_t(nodes_.size() - 1);
  }

  // Adjoints of every node with respect to the node `seed`.
  std::vector<double> backward(std::int32_t seed) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    adj[std::size_t(seed)] = 1.0;
    for (std::int32_t i = seed; i >= 0; --i) {
      const double g = adj[std::size_t(i)];
      if (g == 0.0) continue;
      const Node& n = nodes_[std::size_t(i)];
      if (n.pa >= 0) adj[std::size_t(n.pa)] += n.da * g;
      if (n.pb >= 0) adj[std::size_t(n.pb)] += n.db * g;
    }
    return adj;
  }

 private:
  std::vector<Node> nodes_;
};

Tape*& current_tape();

// RAII installation of the active tape for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& t) : prev_(current_tape()) { current_tape() = &t; }
  ~TapeScope() { current_tape() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

inline Tape& tape() {
  Tape* t = current_tape();
  if (!t) throw std::logic_error("ad::Var used with no active TapeScope");
  return *t;
}

struct Var {
  std::int32_t idx = -1;

  Var() = default;
  // Implicit: literals become constant nodes on the active tape.
  Var(double v) : idx(tape().push(v, -1, 0.0, -1, 0.0, "const")) {}

  // Wraps an existing tape node without recording anything new.
  static Var from_index(std::int32_t i) {
    Var v;
    v.idx = i;
    return v;
  }

  double value() const { return tape().value(idx); }
};

inline double value_of(const Var& x) { return x.value(); }

inline Var make_var(double v) { return Var(v); }

// --- arithmetic -------------------------------------------------------------

inline Var operator+(Var a, Var b) {
  return Var::from_index(tape().push(a.value() + b.value(), a.idx, 1.0, b.idx, 1.0, "add"));
}
inline Var operator+(Var a, double b) {
  return Var::from_index(tape().push(a.value() + b, a.idx, 1.0, -1, 0.0, "add"));
}
inline Var operator+(double a, Var b) { return b + a; }

inline Var operator-(Var a, Var b) {
  return Var::from_index(tape().push(a.value() - b.value(), a.idx, 1.0, b.idx, -1.0, "sub"));
}
inline Var operator-(Var a, double b) {
  return Var::from_index(tape().push(a.value() - b, a.idx, 1.0, -1, 0.0, "sub"));
}
inline Var operator-(double a, Var b) {
  return Var::from_index(tape().push(a - b.value(), b.idx, -1.0, -1, 0.0, "sub"));
}
inline Var operator-(Var a) {
  return Var::from_index(tape().push(-a.value(), a.idx, -1.0, -1, 0.0, "neg"));
}

inline Var operator*(Var a, Var b) {
  const double av = a.value(), bv = b.value();
  return Var::from_index(tape().push(av * bv, a.idx, bv, b.idx, av, "mul"));
}
inline Var operator*(Var a, double b) {
  return Var::from_index(tape().push(a.value() * b, a.idx, b, -1, 0.0, "mul"));
}
inline Var operator*(double a, Var b) { return b * a; }

inline Var operator/(Var a, Var b) {
  const double av = a.value(), bv = b.value();
  const double r = av / bv;
  return Var::from_index(tape().push(r, a.idx, 1.0 / bv, b.idx, -r / bv, "div"));
}
inline Var operator/(Var a, double b) {
  return Var::from_index(tape().push(a.value() / b, a.idx, 1.0 / b, -1, 0.0, "div"));
}
inline Var operator/(double a, Var b) {
  const double bv = b.value();
  return Var::from_index(tape().push(a / bv, b.idx, -a / (bv * bv), -1, 0.0, "div"));
}

inline Var& operator+=(Var& a, Var b) { return a = a + b; }
inline Var& operator-=(Var& a, Var b) { return a = a - b; }
inline Var& operator*=(Var& a, Var b) { return a = a * b; }

// --- elementary functions ---------------------------------------------------

inline Var exp(Var x) {
  const double e = std::exp(x.value());
  return Var::from_index(tape().push(e, x.idx, e, -1, 0.0, "exp"));
}

inline Var log(Var x) {
  const double v = x.value();
  return Var::from_index(tape().push(std::log(v), x.idx, 1.0 / v, -1, 0.0, "log"));
}

inline Var sqrt(Var x) {
  const double s = std::sqrt(x.value());
  return Var::from_index(tape().push(s, x.idx, 0.5 / s, -1, 0.0, "sqrt"));
}

inline Var tanh(Var x) {
  const double t = std::tanh(x.value());
  return Var::from_index(tape().push(t, x.idx, 1.0 - t * t, -1, 0.0, "tanh"));
}

// |x|; subgradient 0 at the kink.
inline Var abs(Var x) {
  const double v = x.value();
  const double s = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  return Var::from_index(tape().push(std::fabs(v), x.idx, s, -1, 0.0, "abs"));
}

// x^p for real constant exponent; requires x > 0 unless p is integral.
inline Var pow(Var x, double p) {
  const double v = x.value();
  return Var::from_index(tape().push(std::pow(v, p), x.idx, p * std::pow(v, p - 1.0), -1,
                         0.0, "pow"));
}

inline double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_value(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline Var sigmoid(Var x) {
  const double s = sigmoid_value(x.value());
  return Var::from_index(tape().push(s, x.idx, s * (1.0 - s), -1, 0.0, "sigmoid"));
}

inline Var softplus(Var x) {
  const double v = x.value();
  return Var::from_index(tape().push(softplus_value(v), x.idx, sigmoid_value(v), -1, 0.0,
                         "softplus"));
}

}  // namespace afcurve::ad

namespace afcurve {

// double counterparts so templated numerics compile for both scalar types
inline double sigmoid(double x) { return ad::sigmoid_value(x); }
inline double softplus(double x) { return ad::softplus_value(x); }

}  // namespace afcurve
