#pragma once

#include <cstddef>
#include <vector>

// Dense row-major f64 matrix. Deliberately minimal: the library works in
// flat loops over row pointers, so all Matrix has to do is own storage and
// keep rows*cols == data.size().

namespace hourglass {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  void fill(double v) { data.assign(data.size(), v); }
};

// out = A * B (or += when accumulate). A: m x k, B: k x n, out: m x n.
// Row-major friendly loop order (i, k) with axpy over B's rows, so the
// inner loop is contiguous in both B and out.
void matmul(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);

// out = A * B^T (or +=). A: m x k, B: n x k, out: m x n. Inner loop is a
// dot over contiguous rows of A and B.
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);

// out = A^T * B (or +=). A: k x m, B: k x n, out: m x n.
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);

}  // namespace hourglass
