#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "risksets/common.hpp"

namespace risksets {

/// Dense row-major matrix of 64-bit reals. The single numeric value type of
/// the library; vectors are n x 1, scalars 1 x 1.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), a(r * c, fill) {}

  static Matrix scalar(double v) {
    Matrix m(1, 1);
    m.a[0] = v;
    return m;
  }

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  std::size_t size() const { return a.size(); }
  bool empty() const { return a.empty(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : a)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline Matrix matmul(const Matrix& x, const Matrix& y) {
  if (x.cols != y.rows) throw NumericError("matmul: inner dimensions differ");
  Matrix z(x.rows, y.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double* zi = &z.a[i * z.cols];
    for (std::size_t k = 0; k < x.cols; ++k) {
      const double xv = x(i, k);
      if (xv == 0.0) continue;
      const double* yk = &y.a[k * y.cols];
      for (std::size_t j = 0; j < y.cols; ++j) zi[j] += xv * yk[j];
    }
  }
  return z;
}

/// x * y^T
inline Matrix matmul_nt(const Matrix& x, const Matrix& y) {
  if (x.cols != y.cols) throw NumericError("matmul_nt: inner dimensions differ");
  Matrix z(x.rows, y.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xi = &x.a[i * x.cols];
    for (std::size_t j = 0; j < y.rows; ++j) {
      const double* yj = &y.a[j * y.cols];
      double acc = 0.0;
      for (std::size_t k = 0; k < x.cols; ++k) acc += xi[k] * yj[k];
      z(i, j) = acc;
    }
  }
  return z;
}

/// x^T * y
inline Matrix matmul_tn(const Matrix& x, const Matrix& y) {
  if (x.rows != y.rows) throw NumericError("matmul_tn: inner dimensions differ");
  Matrix z(x.cols, y.cols);
  for (std::size_t k = 0; k < x.rows; ++k) {
    const double* xk = &x.a[k * x.cols];
    const double* yk = &y.a[k * y.cols];
    for (std::size_t i = 0; i < x.cols; ++i) {
      const double xv = xk[i];
      if (xv == 0.0) continue;
      double* zi = &z.a[i * z.cols];
      for (std::size_t j = 0; j < y.cols; ++j) zi[j] += xv * yk[j];
    }
  }
  return z;
}

inline Matrix transpose(const Matrix& x) {
  Matrix z(x.cols, x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) z(j, i) = x(i, j);
  return z;
}

/// Compressed sparse row matrix with sorted, unique column indices per row.
struct Csr {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<std::size_t> row_ptr;  // size n_rows + 1
  std::vector<std::size_t> col_idx;
  std::vector<double> val;

  static Csr identity(std::size_t n) {
    Csr m;
    m.n_rows = m.n_cols = n;
    m.row_ptr.resize(n + 1);
    m.col_idx.resize(n);
    m.val.assign(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      m.row_ptr[i] = i;
      m.col_idx[i] = i;
    }
    m.row_ptr[n] = n;
    return m;
  }

  std::size_t nnz() const { return col_idx.size(); }

  Matrix to_dense() const {
    Matrix d(n_rows, n_cols);
    for (std::size_t i = 0; i < n_rows; ++i)
      for (std::size_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p)
        d(i, col_idx[p]) = val[p];
    return d;
  }
};

/// Sparse-dense product s * x.
inline Matrix spmm(const Csr& s, const Matrix& x) {
  if (s.n_cols != x.rows) throw NumericError("spmm: inner dimensions differ");
  Matrix z(s.n_rows, x.cols);
  for (std::size_t i = 0; i < s.n_rows; ++i) {
    double* zi = &z.a[i * z.cols];
    for (std::size_t p = s.row_ptr[i]; p < s.row_ptr[i + 1]; ++p) {
      const double v = s.val[p];
      const double* xr = &x.a[s.col_idx[p] * x.cols];
      for (std::size_t j = 0; j < x.cols; ++j) zi[j] += v * xr[j];
    }
  }
  return z;
}

/// Sparse-transpose-dense product s^T * x. Used by backward passes; for the
/// symmetric matrices in this library it equals spmm.
inline Matrix spmm_t(const Csr& s, const Matrix& x) {
  if (s.n_rows != x.rows) throw NumericError("spmm_t: inner dimensions differ");
  Matrix z(s.n_cols, x.cols);
  for (std::size_t i = 0; i < s.n_rows; ++i) {
    const double* xi = &x.a[i * x.cols];
    for (std::size_t p = s.row_ptr[i]; p < s.row_ptr[i + 1]; ++p) {
      const double v = s.val[p];
      double* zr = &z.a[s.col_idx[p] * z.cols];
      for (std::size_t j = 0; j < x.cols; ++j) zr[j] += v * xi[j];
    }
  }
  return z;
}

}  // namespace risksets
