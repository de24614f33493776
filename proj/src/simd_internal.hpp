#pragma once

#include <cstddef>

// Internal dispatch table shared between the backend translation units and
// the dispatcher. Not installed; include only from src/.

namespace hourglass::kern::detail {

struct Ops {
  double (*dot)(const double*, const double*, std::size_t);
  void (*axpy)(double*, double, const double*, std::size_t);
  void (*scale)(double*, double, std::size_t);
  double (*reduce_max)(const double*, std::size_t);
  double (*reduce_sum)(const double*, std::size_t);
  double (*sum_squares)(const double*, std::size_t);
};

// nullptr when the translation unit was built without AVX2 support
// (non-x86 targets).
const Ops* avx2_ops();

}  // namespace hourglass::kern::detail
