#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hourglass/matrix.hpp"
#include "hourglass/model.hpp"

// Block-granular KV cache for autoregressive decoding. Each layer stores
// only the key/value blocks its attention pattern can ever read again:
// full layers keep everything, sink layers keep the sink blocks plus a
// rolling window (a ring buffer — once the window is saturated, a new
// block overwrites the slot of the one falling out, no allocation), and
// stride layers keep the stride-multiple blocks plus the current diagonal
// block in a reused slot.
//
// Invariant, checked by the tests after every step: the set of retained
// block indices per layer equals the layout row of the current last
// position. Decode logits therefore match a fresh batch forward over the
// whole sequence (to rounding — decode merges per-block softmax chunks
// online instead of materializing rows).
//
// Byte accounting is deployment-style: every retained token costs
// 2 (K and V) * hidden * bytes_per_element bytes, with bytes_per_element
// defaulting to 2 (fp16/bf16 storage), and partially filled blocks
// accounted as full blocks capped by the sequence length.

namespace hourglass {

struct CacheBlock {
  static constexpr std::size_t kNoBlock = static_cast<std::size_t>(-1);
  std::size_t block_index = kNoBlock;
  Matrix k;  // block_size x hidden, post-RoPE keys
  Matrix v;  // block_size x hidden
  std::size_t filled = 0;

  bool in_use() const { return block_index != kNoBlock; }
};

struct LayerCache {
  PatternSpec spec;
  std::vector<CacheBlock> sink;  // attn_sink: blocks [0, sink_blocks)
  std::vector<CacheBlock> ring;  // attn_sink: window slots, index = block % window
  std::vector<CacheBlock> kept;  // full: all blocks; stride: stride multiples
  CacheBlock current;            // stride: the non-multiple diagonal block
};

struct KVCacheState {
  const HybridModel* model = nullptr;  // must outlive the state
  std::size_t bytes_per_element = 2;
  std::size_t tokens_seen = 0;
  std::vector<LayerCache> layers;
};

// Runs the batch forward once, stores the retained blocks per layer, and
// (optionally) hands back the last position's logits — which equal
// model_forward's last row exactly, it is the same computation.
KVCacheState prefill(const HybridModel& m, std::span<const std::int32_t> tokens,
                     std::size_t bytes_per_element = 2,
                     std::vector<double>* last_logits = nullptr);

// Appends one token, evicting at block boundaries per the layer patterns,
// and returns its next-token logits (vocab-sized).
std::vector<double> decode_step(KVCacheState& state, std::int32_t token);

// Ascending block indices a layer currently retains.
std::vector<std::size_t> retained_block_indices(const KVCacheState& state,
                                                std::size_t layer);

std::size_t cache_bytes(const KVCacheState& state);

// Same accounting straight from the pattern arithmetic, no state needed.
// Equals cache_bytes of a state holding seq_len tokens.
std::size_t cache_bytes_closed_form(const ModelConfig& cfg, const LayerMap& map,
                                    std::size_t seq_len,
                                    std::size_t bytes_per_element = 2);

// Human-readable per-layer dump: pattern, retained blocks, byte count.
std::string cache_summary(const KVCacheState& state);

}  // namespace hourglass
