#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "crl/errors.hpp"
#include "crl/rng.hpp"

namespace crl {

using Vector = std::vector<double>;

struct NotSymmetric : Error {
  using Error::Error;
};
struct NotPositiveDefinite : Error {
  using Error::Error;
};
struct EmptyInput : Error {
  using Error::Error;
};
struct ZeroVector : Error {
  using Error::Error;
};
struct NoConvergence : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Vector helpers
// ---------------------------------------------------------------------------

inline double dot(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw DimensionMismatch("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

inline double norm(const Vector& u) { return std::sqrt(dot(u, u)); }

inline double sq_dist(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw DimensionMismatch("sq_dist: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    double d = u[i] - v[i];
    s += d * d;
  }
  return s;
}

inline Vector operator+(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw DimensionMismatch("vector add: size mismatch");
  Vector w(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) w[i] = u[i] + v[i];
  return w;
}

inline Vector operator-(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw DimensionMismatch("vector sub: size mismatch");
  Vector w(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) w[i] = u[i] - v[i];
  return w;
}

inline Vector scaled(const Vector& u, double c) {
  Vector w(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) w[i] = c * u[i];
  return w;
}

inline bool all_finite(const Vector& u) {
  for (double x : u)
    if (!std::isfinite(x)) return false;
  return true;
}

/// cos(u, v) = u.v / (|u| |v|), clamped to [-1, 1] so downstream acos and
/// 1 - cos metrics never see values drifted past the endpoints.
inline double cosine(const Vector& u, const Vector& v) {
  double nu = norm(u);
  double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) throw ZeroVector("cosine: zero vector");
  double c = dot(u, v) / (nu * nv);
  return std::clamp(c, -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Dense row-major matrix
// ---------------------------------------------------------------------------

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> entries)
      : rows_(rows), cols_(cols), data_(entries) {
    if (data_.size() != rows * cols) throw DimensionMismatch("matrix: entry count");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(const Vector& d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  const double* row(std::size_t i) const { return data_.data() + i * cols_; }
  double* row(std::size_t i) { return data_.data() + i * cols_; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Vector operator*(const Matrix& m, const Vector& v) {
  if (m.cols() != v.size()) throw DimensionMismatch("matvec: size mismatch");
  Vector out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* r = m.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += r[j] * v[j];
    out[i] = s;
  }
  return out;
}

/// m^T v without materializing the transpose.
inline Vector tmatvec(const Matrix& m, const Vector& v) {
  if (m.rows() != v.size()) throw DimensionMismatch("tmatvec: size mismatch");
  Vector out(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* r = m.row(i);
    double vi = v[i];
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += r[j] * vi;
  }
  return out;
}

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul: size mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row(k);
      double* crow = c.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionMismatch("matrix add: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionMismatch("matrix sub: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

inline Matrix scaled(const Matrix& a, double c) {
  Matrix m = a;
  for (double& x : m.data()) x *= c;
  return m;
}

inline double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double x : m.data()) s += x * x;
  return std::sqrt(s);
}

inline double max_abs(const Matrix& m) {
  double s = 0.0;
  for (double x : m.data()) s = std::max(s, std::abs(x));
  return s;
}

inline double trace(const Matrix& m) {
  if (m.rows() != m.cols()) throw DimensionMismatch("trace: not square");
  double s = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) s += m(i, i);
  return s;
}

// ---------------------------------------------------------------------------
// SPD matrices and Cholesky
// ---------------------------------------------------------------------------

/// Symmetric positive definite matrix together with its lower Cholesky
/// factor. Successful factorization is the positive definiteness certificate;
/// there is no separate eigendecomposition path.
class SpdMatrix {
 public:
  SpdMatrix() = default;

  const Matrix& base() const { return base_; }
  const Matrix& chol() const { return chol_; }
  std::size_t dim() const { return base_.rows(); }

  double trace() const {
    double s = 0.0;
    for (std::size_t i = 0; i < dim(); ++i) s += base_(i, i);
    return s;
  }

  /// Solves base * x = rhs via the factor (forward then back substitution).
  Vector solve(const Vector& rhs) const {
    std::size_t n = dim();
    if (rhs.size() != n) throw DimensionMismatch("solve: size mismatch");
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = rhs[i];
      for (std::size_t j = 0; j < i; ++j) s -= chol_(i, j) * y[j];
      y[i] = s / chol_(i, i);
    }
    Vector x(n);
    for (std::size_t ii = n; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t j = ii + 1; j < n; ++j) s -= chol_(j, ii) * x[j];
      x[ii] = s / chol_(ii, ii);
    }
    return x;
  }

  friend SpdMatrix cholesky(const Matrix& m, double sym_tol);

 private:
  Matrix base_;
  Matrix chol_;
};

/// Factors a square symmetric matrix as L L^T with L lower triangular.
/// Symmetry is checked relative to the largest entry magnitude; a
/// non-positive pivot means the matrix is not positive definite.
inline SpdMatrix cholesky(const Matrix& m, double sym_tol = 1e-12) {
  if (m.rows() != m.cols() || m.rows() == 0)
    throw DimensionMismatch("cholesky: matrix must be square and nonempty");
  std::size_t n = m.rows();
  double scale = max_abs(m);
  for (double x : m.data())
    if (!std::isfinite(x)) throw Error("cholesky: non-finite entry");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(m(i, j) - m(j, i)) > sym_tol * std::max(scale, 1e-300))
        throw NotSymmetric("cholesky: input is not symmetric");

  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (d <= 0.0 || !std::isfinite(d))
      throw NotPositiveDefinite("cholesky: non-positive pivot at index " + std::to_string(j));
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  SpdMatrix out;
  out.base_ = m;
  out.chol_ = std::move(l);
  return out;
}

// ---------------------------------------------------------------------------
// Stable softmax
// ---------------------------------------------------------------------------

/// Softmax with max subtraction, so the result is invariant under adding a
/// constant to all scores and never overflows.
inline Vector stable_softmax(const Vector& scores) {
  if (scores.empty()) throw EmptyInput("stable_softmax: empty scores");
  double m = *std::max_element(scores.begin(), scores.end());
  if (!std::isfinite(m)) throw Error("stable_softmax: non-finite score");
  Vector w(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    w[i] = std::exp(scores[i] - m);
    z += w[i];
  }
  for (double& x : w) x /= z;
  return w;
}

// ---------------------------------------------------------------------------
// Operator norm
// ---------------------------------------------------------------------------

/// Largest singular value by power iteration on m^T m. Converges when the
/// estimate moves by less than tol relatively between iterations. The
/// default budget covers spectra whose two leading singular values differ
/// by as little as a few parts in 10^4.
inline double op_norm(const Matrix& m, std::size_t iters = 20000, double tol = 1e-10) {
  if (m.empty()) throw EmptyInput("op_norm: empty matrix");
  // Deterministic pseudo-random start avoids stalling in an invariant
  // subspace for any fixed input.
  Rng rng(0x51ab5e9dull);
  Vector v(m.cols());
  for (double& x : v) x = rng.normal();
  double nv = norm(v);
  for (double& x : v) x /= nv;

  double prev = -1.0;
  for (std::size_t it = 0; it < iters; ++it) {
    Vector w = m * v;
    Vector u = tmatvec(m, w);
    double nu = norm(u);
    if (nu == 0.0) return 0.0;  // v is in the null space of m^T m
    double est = std::sqrt(nu);
    for (std::size_t i = 0; i < u.size(); ++i) v[i] = u[i] / nu;
    if (prev >= 0.0 && std::abs(est - prev) <= tol * std::max(est, 1e-300)) return est;
    prev = est;
  }
  throw NoConvergence("op_norm: no convergence after " + std::to_string(iters) + " iterations");
}

}  // namespace crl
