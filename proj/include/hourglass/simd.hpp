#pragma once

#include <cstddef>
#include <string_view>

// Low-level f64 kernels used by every hot loop in the library.
//
// Two implementations exist: a plain scalar reference (compiled with
// -ffp-contract=off so it is exactly what it reads as) and an AVX2+FMA
// variant. The active backend is a process-wide setting resolved once at
// startup to the best available instruction set; callers can override it
// (e.g. --backend scalar) before doing any math. Dispatch goes through a
// function-pointer table so the choice costs nothing per call site.
//
// Determinism contract: for a fixed backend, every kernel is a fixed serial
// reduction order — repeated calls on identical inputs give identical bits.
// The two backends agree to rounding (FMA fuses the multiply-add), not to
// the bit; the equivalence tests pin the tolerance.

namespace hourglass::kern {

enum class Backend { scalar, avx2 };

std::string_view backend_name(Backend b);
bool backend_available(Backend b);
Backend best_available_backend();
Backend active_backend();

// Throws std::invalid_argument if the backend is not available on this CPU.
void set_backend(Backend b);

// Accepts "scalar", "avx2" or "auto". Returns false on an unknown name.
bool set_backend_by_name(std::string_view name);

// sum_i a[i]*b[i]
double dot(const double* a, const double* b, std::size_t n);

// y[i] += a * x[i]
void axpy(double* y, double a, const double* x, std::size_t n);

// x[i] *= a
void scale(double* x, double a, std::size_t n);

// max over x[0..n), -inf for n == 0. Inputs must be finite or -inf (the
// attention code feeds masked logits through here); NaN behaviour is
// unspecified.
double reduce_max(const double* x, std::size_t n);

// sum over x[0..n)
double reduce_sum(const double* x, std::size_t n);

// sum_i x[i]^2
double sum_squares(const double* x, std::size_t n);

// Scalar reference implementations, always available regardless of the
// active backend. The equivalence tests compare the dispatched kernels
// against these.
namespace scalar_ref {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double* y, double a, const double* x, std::size_t n);
void scale(double* x, double a, std::size_t n);
double reduce_max(const double* x, std::size_t n);
double reduce_sum(const double* x, std::size_t n);
double sum_squares(const double* x, std::size_t n);
}  // namespace scalar_ref

}  // namespace hourglass::kern
