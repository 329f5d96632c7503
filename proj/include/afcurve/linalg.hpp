#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

// Small dense linear algebra templated on the scalar type, so the same
// numerics run in plain double and on the autodiff tape (ad::Var).
// Matrices are row-major.  Factor dimension is fixed at 3 throughout the
// model but nothing here assumes it.

namespace afcurve {

// Latent factor count (level, slope, curvature) shared across the model.
inline constexpr int kStateDim = 3;

inline double value_of(double x) { return x; }

class SingularMatrixError : public std::runtime_error {
 public:
  explicit SingularMatrixError(const char* what) : std::runtime_error(what) {}
};

template <class T>
class VecX {
 public:
  VecX() = default;
  explicit VecX(int n) : v_(std::size_t(n)) {}
  VecX(std::initializer_list<T> init) : v_(init) {}

  int size() const { return int(v_.size()); }
  T& operator[](int i) { return v_[std::size_t(i)]; }
  const T& operator[](int i) const { return v_[std::size_t(i)]; }
  T* data() { return v_.data(); }
  const T* data() const { return v_.data(); }
  auto begin() { return v_.begin(); }
  auto end() { return v_.end(); }
  auto begin() const { return v_.begin(); }
  auto end() const { return v_.end(); }

 private:
  std::vector<T> v_;
};

template <class T>
class MatX {
 public:
  MatX() = default;
  MatX(int rows, int cols) : rows_(rows), cols_(cols), a_(std::size_t(rows) * std::size_t(cols)) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  T& operator()(int i, int j) { return a_[std::size_t(i) * cols_ + j]; }
  const T& operator()(int i, int j) const { return a_[std::size_t(i) * cols_ + j]; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> a_;
};

using VecXd = VecX<double>;
using MatXd = MatX<double>;

template <class T>
MatX<T> identity(int n) {
  MatX<T> m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = T(i == j ? 1.0 : 0.0);
  return m;
}

template <class T>
MatX<T> zeros(int rows, int cols) {
  MatX<T> m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = T(0.0);
  return m;
}

// Copies of numeric containers with entries converted to T (e.g. onto the
// autodiff tape as constants).
template <class T>
VecX<T> lift_vector(const VecX<double>& v) {
  VecX<T> r(v.size());
  for (int i = 0; i < v.size(); ++i) r[i] = T(v[i]);
  return r;
}

template <class T>
MatX<T> lift_matrix(const MatX<double>& m) {
  MatX<T> r(m.rows(), m.cols());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) r(i, j) = T(m(i, j));
  return r;
}

template <class T>
VecX<T> zeros_vec(int n) {
  VecX<T> v(n);
  for (int i = 0; i < n; ++i) v[i] = T(0.0);
  return v;
}

template <class T>
MatX<T> transpose(const MatX<T>& a) {
  MatX<T> r(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) r(j, i) = a(i, j);
  return r;
}

template <class T>
MatX<T> matmul(const MatX<T>& a, const MatX<T>& b) {
  assert(a.cols() == b.rows());
  MatX<T> r(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j < b.cols(); ++j) {
      T s = a(i, 0) * b(0, j);
      for (int k = 1; k < a.cols(); ++k) s = s + a(i, k) * b(k, j);
      r(i, j) = s;
    }
  }
  return r;
}

template <class T>
VecX<T> matvec(const MatX<T>& a, const VecX<T>& x) {
  assert(a.cols() == x.size());
  VecX<T> r(a.rows());
  for (int i = 0; i < a.rows(); ++i) {
    T s = a(i, 0) * x[0];
    for (int k = 1; k < a.cols(); ++k) s = s + a(i, k) * x[k];
    r[i] = s;
  }
  return r;
}

template <class T>
MatX<T> operator+(const MatX<T>& a, const MatX<T>& b) {
  assert(a.rows() == b.rows() && a.cols() == b.cols());
  MatX<T> r(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) r(i, j) = a(i, j) + b(i, j);
  return r;
}

template <class T>
MatX<T> operator-(const MatX<T>& a, const MatX<T>& b) {
  assert(a.rows() == b.rows() && a.cols() == b.cols());
  MatX<T> r(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) r(i, j) = a(i, j) - b(i, j);
  return r;
}

template <class T, class S>
MatX<T> operator*(const MatX<T>& a, S s) {
  MatX<T> r(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) r(i, j) = a(i, j) * s;
  return r;
}

template <class T>
VecX<T> operator+(const VecX<T>& a, const VecX<T>& b) {
  assert(a.size() == b.size());
  VecX<T> r(a.size());
  for (int i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

template <class T>
VecX<T> operator-(const VecX<T>& a, const VecX<T>& b) {
  assert(a.size() == b.size());
  VecX<T> r(a.size());
  for (int i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

template <class T, class S>
VecX<T> operator*(const VecX<T>& a, S s) {
  VecX<T> r(a.size());
  for (int i = 0; i < a.size(); ++i) r[i] = a[i] * s;
  return r;
}

template <class T>
T dot(const VecX<T>& a, const VecX<T>& b) {
  assert(a.size() == b.size());
  T s = a[0] * b[0];
  for (int i = 1; i < a.size(); ++i) s = s + a[i] * b[i];
  return s;
}

template <class T>
MatX<T> outer(const VecX<T>& a, const VecX<T>& b) {
  MatX<T> r(a.size(), b.size());
  for (int i = 0; i < a.size(); ++i)
    for (int j = 0; j < b.size(); ++j) r(i, j) = a[i] * b[j];
  return r;
}

template <class T>
MatX<T> symmetrize(const MatX<T>& a) {
  assert(a.rows() == a.cols());
  MatX<T> r(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) r(i, j) = (a(i, j) + a(j, i)) * 0.5;
  return r;
}

// Lower Cholesky factor of an SPD matrix.  Throws SingularMatrixError when a
// pivot is not strictly positive; callers decide how to regularize.
template <class T>
MatX<T> cholesky(const MatX<T>& s) {
  assert(s.rows() == s.cols());
  const int n = s.rows();
  MatX<T> l = zeros<T>(n, n);
  for (int j = 0; j < n; ++j) {
    T d = s(j, j);
    for (int k = 0; k < j; ++k) d = d - l(j, k) * l(j, k);
    if (!(value_of(d) > 0.0))
      throw SingularMatrixError("cholesky: matrix not positive definite");
    using std::sqrt;
    l(j, j) = sqrt(d);
    for (int i = j + 1; i < n; ++i) {
      T a = s(i, j);
      for (int k = 0; k < j; ++k) a = a - l(i, k) * l(j, k);
      l(i, j) = a / l(j, j);
    }
  }
  return l;
}

// Solves S x = b given the lower Cholesky factor L (S = L L^T).
template <class T>
VecX<T> chol_solve(const MatX<T>& l, const VecX<T>& b) {
  const int n = l.rows();
  assert(b.size() == n);
  VecX<T> y(n);
  for (int i = 0; i < n; ++i) {
    T s = b[i];
    for (int k = 0; k < i; ++k) s = s - l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  VecX<T> x(n);
  for (int i = n - 1; i >= 0; --i) {
    T s = y[i];
    for (int k = i + 1; k < n; ++k) s = s - l(k, i) * x[k];
    x[i] = s / l(i, i);
  }
  return x;
}

// Solves S X = B column-wise given the lower Cholesky factor of S.
template <class T>
MatX<T> chol_solve_mat(const MatX<T>& l, const MatX<T>& b) {
  MatX<T> x(b.rows(), b.cols());
  for (int j = 0; j < b.cols(); ++j) {
    VecX<T> col(b.rows());
    for (int i = 0; i < b.rows(); ++i) col[i] = b(i, j);
    VecX<T> sol = chol_solve(l, col);
    for (int i = 0; i < b.rows(); ++i) x(i, j) = sol[i];
  }
  return x;
}

// Matrix exponential by scaling and squaring with a truncated Taylor series.
// The scale count is chosen from the 1-norm of the numeric values, so the
// branch is a constant of the forward pass on the tape.
template <class T>
MatX<T> expm(const MatX<T>& m, int taylor_terms = 18) {
  assert(m.rows() == m.cols());
  const int n = m.rows();
  double norm1 = 0.0;
  for (int j = 0; j < n; ++j) {
    double c = 0.0;
    for (int i = 0; i < n; ++i) c += std::fabs(value_of(m(i, j)));
    norm1 = std::max(norm1, c);
  }
  int squarings = 0;
  double scale = 1.0;
  while (norm1 * scale > 0.25 && squarings < 60) {
    scale *= 0.5;
    ++squarings;
  }
  MatX<T> b = m * scale;
  MatX<T> result = identity<T>(n);
  MatX<T> term = identity<T>(n);
  for (int k = 1; k <= taylor_terms; ++k) {
    term = matmul(term, b) * (1.0 / k);
    result = result + term;
  }
  for (int s = 0; s < squarings; ++s) result = matmul(result, result);
  return result;
}

// Pairwise (cascade) summation: deterministic and accurate independent of n.
inline double pairwise_sum(std::span<const double> x) {
  if (x.empty()) return 0.0;
  if (x.size() <= 8) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  }
  const std::size_t half = x.size() / 2;
  return pairwise_sum(x.subspan(0, half)) + pairwise_sum(x.subspan(half));
}

inline double max_abs_diff(const MatXd& a, const MatXd& b) {
  double m = 0.0;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) m = std::max(m, std::fabs(a(i, j) - b(i, j)));
  return m;
}

inline double max_abs_diff(const VecXd& a, const VecXd& b) {
  double m = 0.0;
  for (int i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace afcurve
