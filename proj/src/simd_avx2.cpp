#include "simd_internal.hpp"

// AVX2 + FMA kernels. This translation unit alone is compiled with
// -mavx2 -mfma (see src/CMakeLists.txt); everything else in the library
// stays baseline so the binary still runs on machines without AVX2 — the
// dispatcher checks the CPU at startup before routing here.
//
// Each kernel processes 4 lanes per step and finishes the tail serially.
// Horizontal reductions collapse lanes in a fixed order so results are
// deterministic run to run.

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cmath>
#include <limits>

namespace hourglass::kern::detail {
namespace {

inline double hsum(__m256d v) {
  // (v0 + v1) + (v2 + v3): fixed association, independent of how the
  // accumulator was built up.
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  __m128d pair = _mm_add_pd(lo, hi);          // {v0+v2, v1+v3}
  __m128d swap = _mm_unpackhi_pd(pair, pair); // {v1+v3, v1+v3}
  return _mm_cvtsd_f64(_mm_add_sd(pair, swap));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  }
  double tail = 0.0;
  for (; i < n; ++i) tail = std::fma(a[i], b[i], tail);
  return hsum(acc) + tail;
}

void axpy_avx2(double* y, double a, const double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void scale_avx2(double* x, double a, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), va));
  }
  for (; i < n; ++i) x[i] *= a;
}

double reduce_max_avx2(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  if (n >= 4) {
    __m256d vm = _mm256_loadu_pd(x);
    for (i = 4; i + 4 <= n; i += 4) {
      vm = _mm256_max_pd(vm, _mm256_loadu_pd(x + i));
    }
    __m128d lo = _mm256_castpd256_pd128(vm);
    __m128d hi = _mm256_extractf128_pd(vm, 1);
    __m128d pair = _mm_max_pd(lo, hi);
    __m128d swap = _mm_unpackhi_pd(pair, pair);
    m = _mm_cvtsd_f64(_mm_max_sd(pair, swap));
  }
  for (; i < n; ++i) {
    if (x[i] > m) m = x[i];
  }
  return m;
}

double reduce_sum_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double tail = 0.0;
  for (; i < n; ++i) tail += x[i];
  return hsum(acc) + tail;
}

double sum_squares_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    acc = _mm256_fmadd_pd(v, v, acc);
  }
  double tail = 0.0;
  for (; i < n; ++i) tail = std::fma(x[i], x[i], tail);
  return hsum(acc) + tail;
}

constexpr Ops kAvx2Ops = {
    dot_avx2, axpy_avx2, scale_avx2, reduce_max_avx2, reduce_sum_avx2, sum_squares_avx2,
};

}  // namespace

const Ops* avx2_ops() { return &kAvx2Ops; }

}  // namespace hourglass::kern::detail

#else  // no AVX2 at compile time

namespace hourglass::kern::detail {
const Ops* avx2_ops() { return nullptr; }
}  // namespace hourglass::kern::detail

#endif
