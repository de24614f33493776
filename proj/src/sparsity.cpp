#include "hourglass/sparsity.hpp"

#include <algorithm>
#include <charconv>
#include <stdexcept>

namespace hourglass {

PatternSpec PatternSpec::full(std::size_t block_size) {
  PatternSpec s;
  s.kind = PatternKind::full;
  s.block_size = block_size;
  s.validate();
  return s;
}

PatternSpec PatternSpec::attn_sink(std::size_t sink, std::size_t window,
                                   std::size_t block_size) {
  PatternSpec s;
  s.kind = PatternKind::attn_sink;
  s.sink_blocks = sink;
  s.window_blocks = window;
  s.block_size = block_size;
  s.validate();
  return s;
}

PatternSpec PatternSpec::block_stride(std::size_t stride, std::size_t block_size) {
  PatternSpec s;
  s.kind = PatternKind::block_stride;
  s.stride_blocks = stride;
  s.block_size = block_size;
  s.validate();
  return s;
}

void PatternSpec::validate() const {
  if (block_size == 0) throw std::invalid_argument("pattern: block_size must be >= 1");
  switch (kind) {
    case PatternKind::full:
      break;
    case PatternKind::attn_sink:
      if (sink_blocks == 0 || window_blocks == 0) {
        throw std::invalid_argument("sink pattern: sink and window must be >= 1");
      }
      break;
    case PatternKind::block_stride:
      if (stride_blocks == 0) {
        throw std::invalid_argument("stride pattern: stride must be >= 1");
      }
      break;
  }
}

namespace {

// Allowed block columns for row r, ascending, deduplicated. Shared by the
// layout builder and (indirectly, via the tests) everything downstream.
void row_columns(const PatternSpec& spec, std::size_t r,
                 std::vector<std::size_t>& cols) {
  cols.clear();
  switch (spec.kind) {
    case PatternKind::full:
      for (std::size_t c = 0; c <= r; ++c) cols.push_back(c);
      break;
    case PatternKind::attn_sink: {
      const std::size_t win_start =
          r + 1 >= spec.window_blocks ? r + 1 - spec.window_blocks : 0;
      for (std::size_t c = 0; c < spec.sink_blocks && c <= r; ++c) {
        if (c < win_start) cols.push_back(c);
      }
      for (std::size_t c = win_start; c <= r; ++c) cols.push_back(c);
      break;
    }
    case PatternKind::block_stride:
      for (std::size_t c = 0; c < r; c += spec.stride_blocks) cols.push_back(c);
      // Diagonal block is always present; for r % stride == 0 the loop
      // above stopped before r, so this never duplicates.
      cols.push_back(r);
      break;
  }
}

}  // namespace

bool BlockLayout::contains(std::size_t r, std::size_t c) const {
  const auto cols = row(r);
  return std::binary_search(cols.begin(), cols.end(), c);
}

BlockLayout build_layout(const PatternSpec& spec, std::size_t n_blocks) {
  spec.validate();
  BlockLayout layout;
  layout.n_blocks = n_blocks;
  layout.row_offsets.resize(n_blocks + 1, 0);
  std::vector<std::size_t> cols;
  for (std::size_t r = 0; r < n_blocks; ++r) {
    row_columns(spec, r, cols);
    layout.col_indices.insert(layout.col_indices.end(), cols.begin(), cols.end());
    layout.row_offsets[r + 1] = layout.col_indices.size();
  }
  return layout;
}

bool is_allowed(const PatternSpec& spec, std::size_t q_token, std::size_t k_token) {
  spec.validate();
  if (k_token > q_token) return false;  // causal, always
  const std::size_t qb = q_token / spec.block_size;
  const std::size_t kb = k_token / spec.block_size;
  switch (spec.kind) {
    case PatternKind::full:
      return true;
    case PatternKind::attn_sink:
      return kb < spec.sink_blocks || kb + spec.window_blocks > qb;
    case PatternKind::block_stride:
      return kb % spec.stride_blocks == 0 || kb == qb;
  }
  return false;
}

std::size_t retained_token_count(const PatternSpec& spec, std::size_t seq_len) {
  spec.validate();
  if (seq_len == 0) return 0;
  const std::size_t n_blocks = (seq_len + spec.block_size - 1) / spec.block_size;
  std::vector<std::size_t> cols;
  row_columns(spec, n_blocks - 1, cols);
  return std::min(cols.size() * spec.block_size, seq_len);
}

std::string to_grid_string(const BlockLayout& layout) {
  std::string g;
  g.reserve(layout.n_blocks * (layout.n_blocks + 1));
  for (std::size_t r = 0; r < layout.n_blocks; ++r) {
    const auto cols = layout.row(r);
    std::size_t next = 0;
    for (std::size_t c = 0; c < layout.n_blocks; ++c) {
      if (next < cols.size() && cols[next] == c) {
        g += '#';
        ++next;
      } else {
        g += '.';
      }
    }
    g += '\n';
  }
  return g;
}

namespace {

std::size_t parse_count(std::string_view text, std::string_view what) {
  std::size_t value = 0;
  const auto [ptr, ec] =
      std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw std::invalid_argument("pattern: bad " + std::string(what) + " in '" +
                                std::string(text) + "'");
  }
  return value;
}

}  // namespace

PatternSpec parse_pattern(std::string_view text, std::size_t block_size) {
  if (text == "full") return PatternSpec::full(block_size);
  if (text.starts_with("sink:")) {
    const auto rest = text.substr(5);
    const auto comma = rest.find(',');
    if (comma == std::string_view::npos) {
      throw std::invalid_argument("pattern: expected sink:S,W, got '" +
                                  std::string(text) + "'");
    }
    return PatternSpec::attn_sink(parse_count(rest.substr(0, comma), "sink count"),
                                  parse_count(rest.substr(comma + 1), "window count"),
                                  block_size);
  }
  if (text.starts_with("stride:")) {
    return PatternSpec::block_stride(parse_count(text.substr(7), "stride"), block_size);
  }
  throw std::invalid_argument("pattern: unknown pattern '" + std::string(text) +
                              "' (expected full | sink:S,W | stride:K)");
}

std::string format_pattern(const PatternSpec& spec) {
  switch (spec.kind) {
    case PatternKind::full:
      return "full";
    case PatternKind::attn_sink:
      return "sink:" + std::to_string(spec.sink_blocks) + "," +
             std::to_string(spec.window_blocks);
    case PatternKind::block_stride:
      return "stride:" + std::to_string(spec.stride_blocks);
  }
  return "?";
}

}  // namespace hourglass
