#pragma once

#include <span>
#include <vector>

#include "hourglass/matrix.hpp"
#include "hourglass/model.hpp"

// Shared between model.cpp and kvcache.cpp: the decode path must apply
// exactly the same per-layer arithmetic as the batch forward, so the
// pieces live here rather than being duplicated. Not installed.

namespace hourglass::detail {

void rmsnorm_forward(const Matrix& x, const Matrix& g, Matrix& y,
                     std::vector<double>& rstd);
void rmsnorm_backward(const Matrix& x, const Matrix& g,
                      const std::vector<double>& rstd, const Matrix& dy, Matrix& dx,
                      Matrix& dg);
double gelu(double u);
double dgelu(double u);
void slice_head(const Matrix& src, std::size_t head, std::size_t d, Matrix& dst);
void scatter_head(Matrix& dst, std::size_t head, std::size_t d, const Matrix& src);

// Batch forward that also hands out, per layer, the post-RoPE keys and the
// values for every position (N x hidden, heads side by side) — what a KV
// cache would have stored had it been filled token by token.
Matrix forward_with_kv_capture(const HybridModel& m,
                               std::span<const std::int32_t> tokens,
                               std::vector<Matrix>& k_layers,
                               std::vector<Matrix>& v_layers);

}  // namespace hourglass::detail
