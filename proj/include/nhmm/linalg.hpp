#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "nhmm/common.hpp"

namespace nhmm {

// Small dense row-major matrix. Dimensions here are tiny (latent/observation
// dims of a state-space model), so no BLAS backing is needed.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
};

inline Mat mat_mul(const Mat& x, const Mat& y) {
  if (x.cols != y.rows) throw std::invalid_argument("mat_mul: shape mismatch");
  Mat z(x.rows, y.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t k = 0; k < x.cols; ++k) {
      double xv = x(i, k);
      if (xv == 0.0) continue;
      for (std::size_t j = 0; j < y.cols; ++j) z(i, j) += xv * y(k, j);
    }
  return z;
}

inline Mat transpose(const Mat& x) {
  Mat z(x.cols, x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) z(j, i) = x(i, j);
  return z;
}

inline Vec mat_vec(const Mat& x, const Vec& v) {
  if (x.cols != v.size()) throw std::invalid_argument("mat_vec: shape mismatch");
  Vec z(x.rows, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) z[i] += x(i, j) * v[j];
  return z;
}

inline Mat mat_add(const Mat& x, const Mat& y) {
  if (x.rows != y.rows || x.cols != y.cols) throw std::invalid_argument("mat_add: shape mismatch");
  Mat z = x;
  for (std::size_t i = 0; i < z.a.size(); ++i) z.a[i] += y.a[i];
  return z;
}

// Cholesky factor L (lower triangular), M = L L^T. Throws numeric_error if M
// is not positive definite.
inline Mat cholesky(const Mat& m) {
  if (m.rows != m.cols) throw std::invalid_argument("cholesky: not square");
  std::size_t n = m.rows;
  Mat l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (s <= 0.0) throw numeric_error("cholesky: matrix not positive definite");
        l(i, j) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

// Solve M x = b given the Cholesky factor L of M.
inline Vec cholesky_solve(const Mat& l, const Vec& b) {
  std::size_t n = l.rows;
  if (b.size() != n) throw std::invalid_argument("cholesky_solve: shape mismatch");
  Vec y(n), x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
    x[ii] = s / l(ii, ii);
  }
  return x;
}

inline double log_det_from_cholesky(const Mat& l) {
  double s = 0.0;
  for (std::size_t i = 0; i < l.rows; ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

// Symmetric positive-definite solve for multiple right-hand sides stacked as
// columns of B; returns M^{-1} B.
inline Mat cholesky_solve_mat(const Mat& l, const Mat& b) {
  Mat x(b.rows, b.cols);
  Vec col(b.rows);
  for (std::size_t j = 0; j < b.cols; ++j) {
    for (std::size_t i = 0; i < b.rows; ++i) col[i] = b(i, j);
    Vec sol = cholesky_solve(l, col);
    for (std::size_t i = 0; i < b.rows; ++i) x(i, j) = sol[i];
  }
  return x;
}

}  // namespace nhmm
