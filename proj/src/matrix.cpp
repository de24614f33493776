#include "hourglass/matrix.hpp"

#include <stdexcept>

#include "hourglass/simd.hpp"

namespace hourglass {

namespace {

void check_out(Matrix& out, std::size_t r, std::size_t c, bool accumulate) {
  if (accumulate) {
    if (out.rows != r || out.cols != c) {
      throw std::invalid_argument("matmul: accumulate target has wrong shape");
    }
  } else if (out.rows != r || out.cols != c) {
    out = Matrix(r, c);
  } else {
    out.fill(0.0);
  }
}

}  // namespace

void matmul(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dims differ");
  check_out(out, a.rows, b.cols, accumulate);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      kern::axpy(orow, arow[k], b.row(k), b.cols);
    }
  }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dims differ");
  check_out(out, a.rows, b.rows, accumulate);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
      orow[j] += kern::dot(arow, b.row(j), a.cols);
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dims differ");
  check_out(out, a.cols, b.cols, accumulate);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = a.row(k);
    const double* brow = b.row(k);
    for (std::size_t i = 0; i < a.cols; ++i) {
      kern::axpy(out.row(i), arow[i], brow, b.cols);
    }
  }
}

}  // namespace hourglass
