#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "afcurve/ad.hpp"
#include "afcurve/linalg.hpp"
#include "afcurve/neural.hpp"
#include "afcurve/rng.hpp"

using namespace afcurve;

namespace {

// d/dx f at x by central differences.
double fd(const std::function<double(double)>& f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Reverse-mode derivative of a scalar chain built on a fresh tape.
double ad_deriv(const std::function<ad::Var(ad::Var)>& f, double x) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  ad::Var v(x);
  ad::Var y = f(v);
  const auto adj = tape.backward(y.idx);
  return adj[std::size_t(v.idx)];
}

}  // namespace

TEST_CASE("primitive derivatives match finite differences") {
  struct Case {
    std::function<ad::Var(ad::Var)> f;
    std::function<double(double)> g;
    std::vector<double> points;
  };
  using ad::Var;
  const std::vector<Case> cases = {
      {[](Var x) { return exp(x); }, [](double x) { return std::exp(x); }, {-1.2, 0.0, 2.3}},
      {[](Var x) { return log(x); }, [](double x) { return std::log(x); }, {0.2, 1.0, 7.5}},
      {[](Var x) { return sqrt(x); }, [](double x) { return std::sqrt(x); }, {0.25, 3.0}},
      {[](Var x) { return tanh(x); }, [](double x) { return std::tanh(x); }, {-2.0, 0.1, 4.0}},
      {[](Var x) { return abs(x); }, [](double x) { return std::fabs(x); }, {-1.5, 2.5}},
      {[](Var x) { return pow(x, 2.7); }, [](double x) { return std::pow(x, 2.7); }, {0.4, 2.2}},
      {[](Var x) { return sigmoid(x); }, [](double x) { return sigmoid(x); }, {-3.0, 0.0, 3.0}},
      {[](Var x) { return softplus(x); }, [](double x) { return softplus(x); }, {-5.0, 0.0, 5.0}},
  };
  for (const auto& c : cases)
    for (double x : c.points)
      CHECK(ad_deriv(c.f, x) == doctest::Approx(fd(c.g, x)).epsilon(1e-6));
}

TEST_CASE("composite expression has the analytic gradient") {
  // f(a, b) = a^2 b + sin-free mix of the available primitives:
  //   f = a*a*b + exp(a)/b + tanh(a*b)
  ad::Tape tape;
  ad::TapeScope scope(tape);
  const double av = 0.7, bv = 1.3;
  ad::Var a(av), b(bv);
  ad::Var f = a * a * b + exp(a) / b + tanh(a * b);
  const auto adj = tape.backward(f.idx);
  const double sech2 = 1.0 - std::tanh(av * bv) * std::tanh(av * bv);
  const double dfa = 2 * av * bv + std::exp(av) / bv + sech2 * bv;
  const double dfb = av * av - std::exp(av) / (bv * bv) + sech2 * av;
  CHECK(adj[std::size_t(a.idx)] == doctest::Approx(dfa).epsilon(1e-12));
  CHECK(adj[std::size_t(b.idx)] == doctest::Approx(dfb).epsilon(1e-12));
}

TEST_CASE("adjoints accumulate across re-used subexpressions") {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  ad::Var x(1.7);
  ad::Var s = x * x;      // used twice below
  ad::Var f = s * s + s;  // f = x^4 + x^2 -> df/dx = 4 x^3 + 2 x
  const auto adj = tape.backward(f.idx);
  CHECK(adj[std::size_t(x.idx)] ==
        doctest::Approx(4 * 1.7 * 1.7 * 1.7 + 2 * 1.7).epsilon(1e-12));
}

TEST_CASE("non-finite intermediate values abort loudly") {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  ad::Var x(-1.0);
  CHECK_THROWS_AS(log(x), ad::NonFiniteError);
  ad::Var zero(0.0);
  ad::Var one(1.0);
  CHECK_THROWS_AS(one / zero, ad::NonFiniteError);
  try {
    ad::Var y(2.0);
    ad::Var bad = log(y - 5.0);
    (void)bad;
    FAIL("expected NonFiniteError");
  } catch (const ad::NonFiniteError& e) {
    CHECK(std::string(e.op_name) == "log");
  }
}

TEST_CASE("tape scopes nest and restore the previous tape") {
  ad::Tape outer;
  ad::TapeScope so(outer);
  ad::Var a(1.0);
  {
    ad::Tape inner;
    ad::TapeScope si(inner);
    ad::Var b(2.0);
    ad::Var c = b * b;
    CHECK(value_of(c) == 4.0);
    CHECK(inner.size() >= 2);
  }
  // Back on the outer tape.
  ad::Var d = a + 1.0;
  CHECK(value_of(d) == 2.0);
}

TEST_CASE("using a variable without a tape is a logic error") {
  // No TapeScope active on this thread here.
  CHECK_THROWS_AS(ad::Var(1.0), std::logic_error);
}

TEST_CASE("matrix decompositions on the tape equal their numeric versions") {
  Rng rng(4);
  MatXd s(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) s(i, j) = rng.normal();
  MatXd spd = matmul(s, transpose(s));
  for (int i = 0; i < 3; ++i) spd(i, i) += 0.5;
  VecXd rhs{1.0, -2.0, 0.5};

  const MatXd l_num = cholesky(spd);
  const VecXd x_num = chol_solve(l_num, rhs);
  const MatXd e_num = expm(spd * 0.1);

  ad::Tape tape;
  ad::TapeScope scope(tape);
  const MatX<ad::Var> spd_t = lift_matrix<ad::Var>(spd);
  const VecX<ad::Var> rhs_t = lift_vector<ad::Var>(rhs);
  const MatX<ad::Var> l_t = cholesky(spd_t);
  const VecX<ad::Var> x_t = chol_solve(l_t, rhs_t);
  const MatX<ad::Var> e_t = expm(spd_t * 0.1);
  for (int i = 0; i < 3; ++i) {
    CHECK(value_of(x_t[i]) == doctest::Approx(x_num[i]).epsilon(1e-14));
    for (int j = 0; j < 3; ++j) {
      CHECK(value_of(l_t(i, j)) == doctest::Approx(l_num(i, j)).epsilon(1e-14));
      CHECK(value_of(e_t(i, j)) == doctest::Approx(e_num(i, j)).epsilon(1e-14));
    }
  }
}

TEST_CASE("gradient of a solve-based scalar matches finite differences") {
  // loss(m) = sum chol_solve(chol(M), b) exercises the decomposition adjoints.
  Rng rng(12);
  MatXd s(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) s(i, j) = rng.normal();
  MatXd spd = matmul(s, transpose(s));
  for (int i = 0; i < 3; ++i) spd(i, i) += 1.0;
  VecXd b{0.3, -0.7, 0.9};

  auto loss_num = [&](const MatXd& m) {
    const VecXd x = chol_solve(cholesky(m), b);
    return x[0] + x[1] + x[2];
  };

  ad::Tape tape;
  ad::TapeScope scope(tape);
  std::vector<ad::Var> entries;
  MatX<ad::Var> m_t(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      entries.emplace_back(spd(i, j));
      m_t(i, j) = entries.back();
    }
  const VecX<ad::Var> x_t = chol_solve(cholesky(m_t), lift_vector<ad::Var>(b));
  const ad::Var f = x_t[0] + x_t[1] + x_t[2];
  const auto adj = tape.backward(f.idx);

  const double h = 1e-6;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      MatXd up = spd, dn = spd;
      up(i, j) += h;
      dn(i, j) -= h;
      const double ref = (loss_num(up) - loss_num(dn)) / (2 * h);
      CHECK(adj[std::size_t(entries[std::size_t(3 * i + j)].idx)] ==
            doctest::Approx(ref).epsilon(2e-5));
    }
}

TEST_CASE("the gradient driver wraps the tape plumbing") {
  std::vector<double> p{1.0, 2.0, -0.5};
  const GradResult r = grad(p, [](std::span<const ad::Var> v) {
    ad::Var total(0.0);
    for (const ad::Var& x : v) total = total + x * x;
    return total;  // sum of squares -> gradient 2 p
  });
  CHECK(r.value == doctest::Approx(1.0 + 4.0 + 0.25).epsilon(1e-14));
  REQUIRE(r.grad.size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(r.grad[i] == doctest::Approx(2.0 * p[i]).epsilon(1e-12));
}
