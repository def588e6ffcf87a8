#pragma once

// Row-major 2D double tensor plus the three matmul kernels used by the
// forward and backward passes.

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "microdrive/rng.hpp"

namespace microdrive {

struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

  double& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
  double* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
  const double* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }
  size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  static Tensor uniform(int r, int c, double lo, double hi, Rng& rng) {
    Tensor t(r, c);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
  }
};

// C (+)= A * B
inline void matmul_acc(const Tensor& A, const Tensor& B, Tensor& C, bool accumulate) {
  if (A.cols != B.rows) throw std::invalid_argument("matmul: inner dims");
  if (!accumulate) {
    C = Tensor(A.rows, B.cols);
  } else if (C.rows != A.rows || C.cols != B.cols) {
    throw std::invalid_argument("matmul: output dims");
  }
  for (int i = 0; i < A.rows; ++i) {
    double* c = C.row(i);
    const double* a = A.row(i);
    for (int k = 0; k < A.cols; ++k) {
      const double av = a[k];
      if (av == 0.0) continue;
      const double* b = B.row(k);
      for (int j = 0; j < B.cols; ++j) c[j] += av * b[j];
    }
  }
}

// C += A^T * B   (A: m x n, B: m x p, C: n x p)
inline void matmul_tA_acc(const Tensor& A, const Tensor& B, Tensor& C) {
  if (A.rows != B.rows || C.rows != A.cols || C.cols != B.cols)
    throw std::invalid_argument("matmul_tA: dims");
  for (int k = 0; k < A.rows; ++k) {
    const double* a = A.row(k);
    const double* b = B.row(k);
    for (int i = 0; i < A.cols; ++i) {
      const double av = a[i];
      if (av == 0.0) continue;
      double* c = C.row(i);
      for (int j = 0; j < B.cols; ++j) c[j] += av * b[j];
    }
  }
}

// C (+)= A * B^T   (A: m x n, B: p x n, C: m x p)
inline void matmul_tB_acc(const Tensor& A, const Tensor& B, Tensor& C, bool accumulate) {
  if (A.cols != B.cols) throw std::invalid_argument("matmul_tB: inner dims");
  if (!accumulate) {
    C = Tensor(A.rows, B.rows);
  } else if (C.rows != A.rows || C.cols != B.rows) {
    throw std::invalid_argument("matmul_tB: output dims");
  }
  for (int i = 0; i < A.rows; ++i) {
    const double* a = A.row(i);
    double* c = C.row(i);
    for (int j = 0; j < B.rows; ++j) {
      const double* b = B.row(j);
      double s = 0.0;
      for (int k = 0; k < A.cols; ++k) s += a[k] * b[k];
      c[j] += s;
    }
  }
}

}  // namespace microdrive
