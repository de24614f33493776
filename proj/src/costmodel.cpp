#include "hourglass/costmodel.hpp"

#include <stdexcept>
#include <string>

namespace hourglass {

namespace {

std::size_t blocks_for(const PatternSpec& spec, std::size_t seq_len) {
  return (seq_len + spec.block_size - 1) / spec.block_size;
}

}  // namespace

std::uint64_t attended_pairs(const PatternSpec& spec, std::size_t seq_len) {
  spec.validate();
  if (seq_len == 0) return 0;
  const std::size_t bs = spec.block_size;
  const BlockLayout layout = build_layout(spec, blocks_for(spec, seq_len));
  // Query token i in block r sees (|row r| - 1) complete key blocks plus
  // (i mod bs) + 1 keys of its own (diagonal) block.
  std::uint64_t pairs = 0;
  for (std::size_t r = 0; r < layout.n_blocks; ++r) {
    const std::uint64_t rows_r = std::min(bs, seq_len - r * bs);
    const std::uint64_t row_size = layout.row(r).size();
    pairs += rows_r * (row_size - 1) * bs + rows_r * (rows_r + 1) / 2;
  }
  return pairs;
}

std::uint64_t layout_tiles(const PatternSpec& spec, std::size_t seq_len) {
  spec.validate();
  if (seq_len == 0) return 0;
  return build_layout(spec, blocks_for(spec, seq_len)).nnz();
}

std::uint64_t qk_mac_flops(const PatternSpec& spec, std::size_t seq_len,
                           std::size_t head_dim) {
  const std::uint64_t bs = spec.block_size;
  return layout_tiles(spec, seq_len) * bs * bs * head_dim * 2;
}

CostReport layer_costs(const CostConfig& cfg) {
  cfg.sparse.validate();
  if (cfg.seq_len == 0) throw std::invalid_argument("cost: seq_len must be >= 1");
  if (cfg.head_dim == 0 || cfg.n_heads == 0) {
    throw std::invalid_argument("cost: head geometry must be positive");
  }
  if (cfg.l_full + cfg.l_sparse == 0) {
    throw std::invalid_argument("cost: at least one layer required");
  }

  const double N = static_cast<double>(cfg.seq_len);
  const double D = static_cast<double>(cfg.head_dim);
  const double heads = static_cast<double>(cfg.n_heads);
  const double hidden = D * heads;
  const PatternSpec full = PatternSpec::full(cfg.sparse.block_size);

  auto pair_count = [&](const PatternSpec& spec) -> double {
    if (cfg.convention == FlopsConvention::token_exact) {
      return static_cast<double>(attended_pairs(spec, cfg.seq_len));
    }
    const double bs = static_cast<double>(spec.block_size);
    return static_cast<double>(layout_tiles(spec, cfg.seq_len)) * bs * bs;
  };

  const double proj = 8.0 * N * D * D * heads;
  const double ffn = cfg.ffn_mult == 0
                         ? 0.0
                         : 4.0 * static_cast<double>(cfg.ffn_mult) * N * hidden * hidden;
  const double score_full = 4.0 * D * heads * pair_count(full);
  const double score_sparse = 4.0 * D * heads * pair_count(cfg.sparse);

  const double layer_full_fwd = proj + ffn + score_full;
  const double layer_sparse_fwd = proj + ffn + score_sparse;
  const double l_total = static_cast<double>(cfg.l_full + cfg.l_sparse);
  const double l_full = static_cast<double>(cfg.l_full);
  const double l_sparse = static_cast<double>(cfg.l_sparse);

  CostReport r;
  r.prefill_flops_full = l_total * layer_full_fwd;
  r.prefill_flops_sparse = l_full * layer_full_fwd + l_sparse * layer_sparse_fwd;
  r.train_flops_full = 3.0 * r.prefill_flops_full;
  r.train_flops_sparse = 3.0 * r.prefill_flops_sparse;

  const std::size_t hid = cfg.n_heads * cfg.head_dim;
  const std::size_t kv_per_token = 2 * hid * cfg.bytes_per_element;
  const std::size_t full_tokens = cfg.seq_len;
  const std::size_t sparse_tokens = retained_token_count(cfg.sparse, cfg.seq_len);
  r.kv_bytes_full = (cfg.l_full + cfg.l_sparse) * full_tokens * kv_per_token;
  r.kv_bytes_sparse = cfg.l_full * full_tokens * kv_per_token +
                      cfg.l_sparse * sparse_tokens * kv_per_token;

  r.train_ratio = r.train_flops_sparse / r.train_flops_full;
  r.prefill_ratio = r.prefill_flops_sparse / r.prefill_flops_full;
  r.kv_ratio = static_cast<double>(r.kv_bytes_sparse) /
               static_cast<double>(r.kv_bytes_full);

  r.train_speedup = 1.0 / r.train_ratio;
  r.prefill_speedup = 1.0 / r.prefill_ratio;
  r.decode_speedup = 1.0 / r.kv_ratio;
  return r;
}

void validate_against_kernel(const PatternSpec& spec, std::size_t n_tokens,
                             std::size_t head_dim, std::uint64_t measured_tiles) {
  const std::uint64_t predicted = layout_tiles(spec, n_tokens);
  if (predicted != measured_tiles) {
    throw std::runtime_error(
        "cost model disagrees with kernel probe for pattern " +
        format_pattern(spec) + " at n=" + std::to_string(n_tokens) +
        ": predicted " + std::to_string(predicted) + " tiles, kernel visited " +
        std::to_string(measured_tiles) +
        " (qk flops predicted " +
        std::to_string(qk_mac_flops(spec, n_tokens, head_dim)) + ")");
  }
}

}  // namespace hourglass
