#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Block-granular attention patterns. A pattern decides, per query block
// row, which key/value blocks may be attended; the layout materializes
// that decision as a CSR mask over the lower triangle. Masking never
// splits a block: sparsity is all-or-nothing at block granularity, which
// is what makes the tiled kernels and the KV cache bookkeeping line up.

namespace hourglass {

enum class PatternKind { full, attn_sink, block_stride };

struct PatternSpec {
  PatternKind kind = PatternKind::full;
  // attn_sink: first `sink_blocks` block columns are always kept, plus a
  // rolling window of the most recent `window_blocks` blocks (the current
  // block counts as one of them).
  std::size_t sink_blocks = 0;
  std::size_t window_blocks = 0;
  // block_stride: every stride-th block column (0, K, 2K, ...) is kept,
  // plus the current (diagonal) block so a query always sees its own
  // recent context.
  std::size_t stride_blocks = 0;
  // Tokens per block; uniform across the sequence, last block may be
  // partially filled.
  std::size_t block_size = 64;

  static PatternSpec full(std::size_t block_size = 64);
  static PatternSpec attn_sink(std::size_t sink, std::size_t window,
                               std::size_t block_size = 64);
  static PatternSpec block_stride(std::size_t stride, std::size_t block_size = 64);

  // Throws std::invalid_argument on zero counts / zero block size.
  void validate() const;

  bool operator==(const PatternSpec&) const = default;
};

// CSR over block rows: row r's allowed block columns are
// col_indices[row_offsets[r] .. row_offsets[r+1]), strictly ascending,
// all <= r (causal), always containing r itself.
struct BlockLayout {
  std::size_t n_blocks = 0;
  std::vector<std::size_t> row_offsets;  // size n_blocks + 1
  std::vector<std::size_t> col_indices;

  std::span<const std::size_t> row(std::size_t r) const {
    return {col_indices.data() + row_offsets[r],
            row_offsets[r + 1] - row_offsets[r]};
  }
  std::size_t nnz() const { return col_indices.size(); }
  bool contains(std::size_t r, std::size_t c) const;
};

BlockLayout build_layout(const PatternSpec& spec, std::size_t n_blocks);

// Token-level membership computed straight from the pattern arithmetic,
// without building a layout. This is the independent oracle the layout is
// tested against: is_allowed(spec, q, k) must equal "block(k) is in
// layout row block(q)" for every causal pair.
bool is_allowed(const PatternSpec& spec, std::size_t q_token, std::size_t k_token);

// How many KV tokens a decode step at the end of a seq_len-token sequence
// must keep around: the last layout row's block count times block_size,
// capped by the sequence length. Block-granular by design — a partially
// filled block is accounted as a full one.
std::size_t retained_token_count(const PatternSpec& spec, std::size_t seq_len);

// Human-readable mask grid, one row per block row, '#' allowed / '.' not.
std::string to_grid_string(const BlockLayout& layout);

// "full" | "sink:S,W" | "stride:K"  (block size travels separately).
PatternSpec parse_pattern(std::string_view text, std::size_t block_size = 64);
std::string format_pattern(const PatternSpec& spec);

}  // namespace hourglass
