#pragma once

#include <cstdint>
#include <vector>

#include "hourglass/sparsity.hpp"

// Analytic FLOP / byte accounting for hybrid stacks, and the exact
// cross-check tying it to the kernels' tile probes.
//
// Conventions (all constants deliberate and fixed here):
//   - one multiply-accumulate = 2 FLOPs;
//   - attention score work per attended (query, key) pair per head:
//     4 * head_dim FLOPs (QK^T plus PV, 2 FLOPs each per channel);
//   - projections per layer (forward): 4 matmuls at 2*N*head_dim^2 per
//     head — 8*N*head_dim^2*n_heads total;
//   - FFN excluded by default (identical across variants); ffn_mult > 0
//     adds 4*ffn_mult*N*hidden^2 per layer;
//   - backward costs 2x forward, so training = 3x forward;
//   - causal masking: only pairs with key <= query are counted;
//   - KV bytes: 2 (K and V) * hidden * bytes_per_element per retained
//     token, block-granular (a partial block counts as a full one, capped
//     by the sequence length).
//
// Two pair-counting conventions exist because the kernels are tiled:
//   token_exact   — every causal (query, key) pair the mask admits;
//   tile_granular — visited tiles * block_size^2, what a tiled kernel
//                   actually schedules (padded and non-causal slots
//                   included).

namespace hourglass {

enum class FlopsConvention { token_exact, tile_granular };

struct CostConfig {
  std::size_t seq_len = 0;
  std::size_t n_heads = 32;
  std::size_t head_dim = 128;
  std::size_t l_full = 0;    // layers running full attention
  std::size_t l_sparse = 0;  // layers running `sparse`
  PatternSpec sparse = PatternSpec::attn_sink(1, 32, 64);
  std::size_t ffn_mult = 0;  // 0: FFN left out of the accounting
  std::size_t bytes_per_element = 2;
  FlopsConvention convention = FlopsConvention::token_exact;
};

struct CostReport {
  // Whole-model numbers: "full" = all layers full attention (baseline),
  // "sparse" = the hybrid stack (l_full full + l_sparse sparse layers).
  double train_flops_full = 0;
  double train_flops_sparse = 0;
  double prefill_flops_full = 0;
  double prefill_flops_sparse = 0;
  std::size_t kv_bytes_full = 0;
  std::size_t kv_bytes_sparse = 0;

  double train_ratio = 1.0;    // hybrid / baseline
  double prefill_ratio = 1.0;  // hybrid / baseline
  double kv_ratio = 1.0;       // hybrid / baseline

  // Baseline / hybrid — FLOP- and byte-level upper bounds on achievable
  // wall-clock speedups (decode taken as KV-bytes-bound), not wall-clock
  // predictions themselves.
  double train_speedup = 1.0;
  double prefill_speedup = 1.0;
  double decode_speedup = 1.0;
};

// Causal attended (query, key) pairs under the pattern, token-exact.
std::uint64_t attended_pairs(const PatternSpec& spec, std::size_t seq_len);

// Tiles a blocked kernel visits for this pattern and length (layout nnz).
std::uint64_t layout_tiles(const PatternSpec& spec, std::size_t seq_len);

// Single-head QK^T MAC-FLOPs a tiled kernel performs:
// tiles * block_size^2 * head_dim * 2.
std::uint64_t qk_mac_flops(const PatternSpec& spec, std::size_t seq_len,
                           std::size_t head_dim);

CostReport layer_costs(const CostConfig& cfg);

// Zero-tolerance consistency check between the analytic tile count and a
// kernel's probe counter. Throws std::runtime_error on mismatch.
void validate_against_kernel(const PatternSpec& spec, std::size_t n_tokens,
                             std::size_t head_dim, std::uint64_t measured_tiles);

}  // namespace hourglass
