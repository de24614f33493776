#pragma once

#include <cstdint>
#include <vector>

#include "hourglass/matrix.hpp"
#include "hourglass/sparsity.hpp"

// Single-head causal attention with a block-sparse mask, in two builds of
// the same computation:
//
//   dense_attention   — the oracle. Walks every causal tile, computes every
//                       causal pair score, then masks disallowed ones to
//                       -inf. Theta(N^2 D) work regardless of the mask.
//   blocked_forward   — the real kernel. Walks only the tiles the layout
//                       allows, so work is proportional to the layout's
//                       tile count.
//
// Both run through one internal engine with identical per-row reduction
// and accumulation order; masked scores contribute exp(-inf) == 0, which
// never perturbs a sum. The two are therefore bit-identical for every
// pattern, and equivalence failures always mean a real masking bug rather
// than reduction-order noise.
//
// Numerics: softmax is max-shifted per query row; the forward saves the
// per-row log-sum-exp so the backward can recompute probabilities tile by
// tile without rematerializing the score matrix.

namespace hourglass {

// What the backward needs from the forward: outputs and per-row LSE.
struct AttnSaved {
  Matrix o;                 // n_tokens x head_dim
  std::vector<double> lse;  // log-sum-exp of each query row's live scores
};

struct AttnForwardResult {
  AttnSaved saved;
  std::uint64_t tiles_visited = 0;  // probe: tiles whose scores were computed
};

struct AttnGrads {
  Matrix dq, dk, dv;
  std::uint64_t tiles_visited = 0;
};

inline constexpr std::size_t kDenseReferenceCap = 4096;

// Dense oracle. Refuses n_tokens > reference_cap (std::invalid_argument) —
// it is quadratic by construction and the cap keeps accidental use in
// check; benchmarks override it deliberately. n_threads > 1 splits query
// block rows across threads; results are bit-identical to the serial run.
AttnForwardResult dense_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                  const BlockLayout& layout, std::size_t block_size,
                                  double scale,
                                  std::size_t reference_cap = kDenseReferenceCap,
                                  unsigned n_threads = 1);

// Dense-path backward: same quadratic tile walk as dense_attention.
AttnGrads dense_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                         const BlockLayout& layout, std::size_t block_size,
                         double scale, const AttnSaved& saved, const Matrix& d_o,
                         std::size_t reference_cap = kDenseReferenceCap);

// Sparse forward: visits exactly the layout's tiles (tiles_visited ==
// layout.nnz()).
AttnForwardResult blocked_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                                  const BlockLayout& layout, std::size_t block_size,
                                  double scale, unsigned n_threads = 1);

// Sparse backward from the saved forward state. Gradient formulas, with
// P the row-softmax of the masked scores and Delta_i = d_o_i . o_i:
//   dS_ij = P_ij (d_o_i . v_j - Delta_i)
//   d_q = scale * dS K,  d_k = scale * dS^T Q,  d_v = P^T d_o
AttnGrads blocked_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                           const BlockLayout& layout, std::size_t block_size,
                           double scale, const AttnSaved& saved, const Matrix& d_o);

}  // namespace hourglass
