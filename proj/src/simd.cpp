#include "hourglass/simd.hpp"

#include <stdexcept>
#include <string>

#include "simd_internal.hpp"

namespace hourglass::kern {

namespace {

const detail::Ops kScalarOps = {
    scalar_ref::dot,        scalar_ref::axpy,       scalar_ref::scale,
    scalar_ref::reduce_max, scalar_ref::reduce_sum, scalar_ref::sum_squares,
};

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

struct Dispatch {
  Backend backend;
  const detail::Ops* ops;
  Dispatch() {
    backend = best_available_backend();
    ops = (backend == Backend::avx2) ? detail::avx2_ops() : &kScalarOps;
  }
};

Dispatch& dispatch() {
  static Dispatch d;
  return d;
}

}  // namespace

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
  }
  return "?";
}

bool backend_available(Backend b) {
  switch (b) {
    case Backend::scalar: return true;
    case Backend::avx2: return detail::avx2_ops() != nullptr && cpu_has_avx2();
  }
  return false;
}

Backend best_available_backend() {
  return backend_available(Backend::avx2) ? Backend::avx2 : Backend::scalar;
}

Backend active_backend() { return dispatch().backend; }

void set_backend(Backend b) {
  if (!backend_available(b)) {
    throw std::invalid_argument("backend not available on this machine: " +
                                std::string(backend_name(b)));
  }
  dispatch().backend = b;
  dispatch().ops = (b == Backend::avx2) ? detail::avx2_ops() : &kScalarOps;
}

bool set_backend_by_name(std::string_view name) {
  if (name == "auto") {
    set_backend(best_available_backend());
    return true;
  }
  if (name == "scalar") {
    set_backend(Backend::scalar);
    return true;
  }
  if (name == "avx2") {
    set_backend(Backend::avx2);
    return true;
  }
  return false;
}

double dot(const double* a, const double* b, std::size_t n) {
  return dispatch().ops->dot(a, b, n);
}

void axpy(double* y, double a, const double* x, std::size_t n) {
  dispatch().ops->axpy(y, a, x, n);
}

void scale(double* x, double a, std::size_t n) { dispatch().ops->scale(x, a, n); }

double reduce_max(const double* x, std::size_t n) {
  return dispatch().ops->reduce_max(x, n);
}

double reduce_sum(const double* x, std::size_t n) {
  return dispatch().ops->reduce_sum(x, n);
}

double sum_squares(const double* x, std::size_t n) {
  return dispatch().ops->sum_squares(x, n);
}

}  // namespace hourglass::kern
