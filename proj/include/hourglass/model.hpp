#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hourglass/matrix.hpp"
#include "hourglass/sparsity.hpp"

// A small pre-norm decoder transformer whose layers can individually run
// full or block-sparse attention. The point is not scale — it is having a
// complete, differentiable model around the sparse kernels so hybrid layer
// layouts can be trained and compared end to end on one machine.
//
// Architecture per layer: RMS-norm -> QKV projections -> RoPE on q/k ->
// causal (block-sparse) attention per head -> output projection ->
// residual; RMS-norm -> GELU MLP -> residual. Final RMS-norm, then an
// untied unembedding. No biases anywhere.

namespace hourglass {

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t head_dim = 8;   // must be even (RoPE rotates channel pairs)
  std::size_t ffn_mult = 4;
  std::size_t vocab_size = 64;
  std::size_t block_size = 64;  // attention block granularity, tokens
  double rope_base = 5'000'000.0;
  std::uint64_t seed = 0;

  std::size_t hidden() const { return n_heads * head_dim; }
  std::size_t ffn_dim() const { return ffn_mult * hidden(); }
  void validate() const;
};

// Where the full-attention layers sit in the stack.
enum class Placement { bottom, middle, top, interleave };

Placement parse_placement(std::string_view name);
std::string_view placement_name(Placement p);

// One attention pattern per layer.
struct LayerMap {
  std::vector<PatternSpec> layers;
  std::size_t n_full() const;
};

// Assigns ceil(full_fraction * n_layers) full layers, the rest `sparse`.
//   bottom     — full layers first
//   top        — full layers last
//   middle     — full layers centred: start at floor((L - F) / 2)
//   interleave — full layer i at floor((i + 0.5) * L / F), evenly spread
// full_fraction must be in (0, 1]; an all-sparse map (zero full layers) is
// built by hand where needed, not through a zero fraction.
LayerMap build_layer_map(std::size_t n_layers, const PatternSpec& sparse,
                         Placement placement, double full_fraction);

struct LayerParams {
  Matrix attn_norm;  // 1 x H
  Matrix wq, wk, wv, wo;  // H x H
  Matrix ffn_norm;   // 1 x H
  Matrix w1;         // H x FFN
  Matrix w2;         // FFN x H
};

struct ModelParams {
  Matrix embedding;  // V x H
  std::vector<LayerParams> layers;
  Matrix final_norm;  // 1 x H
  Matrix unembed;     // H x V
};

// Tensors in a fixed declaration order with stable names — the single
// source of enumeration for Adam, checkpoints and gradient checks.
std::vector<std::pair<std::string, Matrix*>> tensor_refs(ModelParams& p);
std::vector<std::pair<std::string, const Matrix*>> tensor_refs(const ModelParams& p);

ModelParams zeros_like(const ModelParams& shape);

struct HybridModel {
  ModelConfig config;
  LayerMap map;
  ModelParams params;

  // Seeded normal(0, 0.02) init; the residual-feeding projections (wo,
  // w2) are additionally scaled by 1/sqrt(2 * n_layers) so the residual
  // stream's variance stays flat at init. Norm gains start at 1.
  static HybridModel init(const ModelConfig& config, const LayerMap& map);
};

// Logits for every position (tokens.size() x vocab). `tiles` (optional)
// accumulates attention tiles visited across layers and heads.
Matrix model_forward(const HybridModel& m, std::span<const std::int32_t> tokens,
                     std::uint64_t* tiles = nullptr);

struct LossResult {
  double loss = 0.0;
  ModelParams grads;
  std::uint64_t tiles_visited = 0;
};

// Mean next-token cross-entropy over positions whose target is >= 0
// (targets of -1 are ignored), with gradients for every parameter.
// Throws std::invalid_argument on shape/vocab violations and
// std::runtime_error if no position is counted.
LossResult loss_and_grads(const HybridModel& m, std::span<const std::int32_t> tokens,
                          std::span<const std::int32_t> targets);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ModelParams m;  // first moment
  ModelParams v;  // second moment
  std::uint64_t t = 0;

  static AdamState init(const ModelParams& shape);
};

// One bias-corrected Adam update in place. Throws std::runtime_error if
// any gradient is non-finite (a diverged run should stop, not limp on).
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const AdamConfig& cfg);

// Checkpoint file: "LGEN" magic, u32 format version, length-prefixed
// textual header (config + per-layer patterns), then every tensor's
// doubles little-endian in tensor_refs order. Round-trips bit-exactly.
void save_checkpoint(const HybridModel& m, const std::string& path);
HybridModel load_checkpoint(const std::string& path);

}  // namespace hourglass
