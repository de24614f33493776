#include "hourglass/kvcache.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "hourglass/numerics.hpp"
#include "hourglass/simd.hpp"
#include "model_internal.hpp"

namespace hourglass {

namespace {

CacheBlock make_block(std::size_t index, std::size_t bs, std::size_t H) {
  CacheBlock b;
  b.block_index = index;
  b.k = Matrix(bs, H);
  b.v = Matrix(bs, H);
  b.filled = 0;
  return b;
}

// Claim storage for block qb at the moment its first token arrives.
// Allocation only happens while a region grows; saturated regions reuse
// the slot of the block being evicted.
void start_block(LayerCache& lc, std::size_t qb, std::size_t bs, std::size_t H) {
  switch (lc.spec.kind) {
    case PatternKind::full:
      lc.kept.push_back(make_block(qb, bs, H));
      return;
    case PatternKind::attn_sink: {
      if (qb < lc.spec.sink_blocks) {
        lc.sink.push_back(make_block(qb, bs, H));
        return;
      }
      if (lc.ring.empty()) lc.ring.resize(lc.spec.window_blocks);
      CacheBlock& slot = lc.ring[qb % lc.spec.window_blocks];
      if (slot.k.rows == 0) {
        slot = make_block(qb, bs, H);
      } else {
        slot.block_index = qb;  // rolling buffer: overwrite the evictee
        slot.filled = 0;
      }
      return;
    }
    case PatternKind::block_stride: {
      if (qb % lc.spec.stride_blocks == 0) {
        lc.kept.push_back(make_block(qb, bs, H));
        // The previous diagonal block (if any) just left the retained set.
        lc.current.block_index = CacheBlock::kNoBlock;
        return;
      }
      if (lc.current.k.rows == 0) {
        lc.current = make_block(qb, bs, H);
      } else {
        lc.current.block_index = qb;
        lc.current.filled = 0;
      }
      return;
    }
  }
  throw std::logic_error("start_block: bad pattern kind");
}

CacheBlock& tail_block(LayerCache& lc, std::size_t qb) {
  switch (lc.spec.kind) {
    case PatternKind::full:
      return lc.kept.back();
    case PatternKind::attn_sink:
      if (qb < lc.spec.sink_blocks) return lc.sink.back();
      return lc.ring[qb % lc.spec.window_blocks];
    case PatternKind::block_stride:
      if (qb % lc.spec.stride_blocks == 0) return lc.kept.back();
      return lc.current;
  }
  throw std::logic_error("tail_block: bad pattern kind");
}

void collect_retained(const LayerCache& lc, std::vector<const CacheBlock*>& out) {
  out.clear();
  for (const auto& b : lc.sink) {
    if (b.in_use()) out.push_back(&b);
  }
  std::size_t ring_start = out.size();
  for (const auto& b : lc.ring) {
    if (b.in_use()) out.push_back(&b);
  }
  std::sort(out.begin() + static_cast<std::ptrdiff_t>(ring_start), out.end(),
            [](const CacheBlock* a, const CacheBlock* b) {
              return a->block_index < b->block_index;
            });
  for (const auto& b : lc.kept) {
    if (b.in_use()) out.push_back(&b);
  }
  if (lc.current.in_use()) out.push_back(&lc.current);
}

// out[j] = sum_i x[i] * W[i][j]; out must hold W.cols and start zeroed.
void row_matmul_acc(const double* x, const Matrix& w, double* out) {
  for (std::size_t i = 0; i < w.rows; ++i) kern::axpy(out, x[i], w.row(i), w.cols);
}

}  // namespace

KVCacheState prefill(const HybridModel& m, std::span<const std::int32_t> tokens,
                     std::size_t bytes_per_element,
                     std::vector<double>* last_logits) {
  if (tokens.empty()) throw std::invalid_argument("prefill: empty sequence");
  if (bytes_per_element == 0) {
    throw std::invalid_argument("prefill: bytes_per_element must be >= 1");
  }

  std::vector<Matrix> k_layers, v_layers;
  const Matrix logits = detail::forward_with_kv_capture(m, tokens, k_layers, v_layers);
  if (last_logits) {
    last_logits->assign(logits.row(logits.rows - 1),
                        logits.row(logits.rows - 1) + logits.cols);
  }

  const std::size_t N = tokens.size();
  const std::size_t H = m.config.hidden();
  const std::size_t bs = m.config.block_size;
  const std::size_t qb = (N - 1) / bs;

  KVCacheState st;
  st.model = &m;
  st.bytes_per_element = bytes_per_element;
  st.tokens_seen = N;
  st.layers.resize(m.config.n_layers);
  for (std::size_t l = 0; l < m.config.n_layers; ++l) {
    LayerCache& lc = st.layers[l];
    lc.spec = m.map.layers[l];
    const BlockLayout layout = build_layout(lc.spec, qb + 1);
    for (std::size_t c : layout.row(qb)) {
      const std::size_t rows_c = std::min(bs, N - c * bs);
      CacheBlock b = make_block(c, bs, H);
      std::memcpy(b.k.row(0), k_layers[l].row(c * bs), rows_c * H * sizeof(double));
      std::memcpy(b.v.row(0), v_layers[l].row(c * bs), rows_c * H * sizeof(double));
      b.filled = rows_c;
      switch (lc.spec.kind) {
        case PatternKind::full:
          lc.kept.push_back(std::move(b));
          break;
        case PatternKind::attn_sink:
          if (c < lc.spec.sink_blocks) {
            lc.sink.push_back(std::move(b));
          } else {
            if (lc.ring.empty()) lc.ring.resize(lc.spec.window_blocks);
            lc.ring[c % lc.spec.window_blocks] = std::move(b);
          }
          break;
        case PatternKind::block_stride:
          if (c % lc.spec.stride_blocks == 0) {
            lc.kept.push_back(std::move(b));
          } else {
            lc.current = std::move(b);
          }
          break;
      }
    }
  }
  return st;
}

std::vector<double> decode_step(KVCacheState& state, std::int32_t token) {
  if (state.model == nullptr) throw std::invalid_argument("decode: empty state");
  const HybridModel& m = *state.model;
  if (token < 0 || static_cast<std::size_t>(token) >= m.config.vocab_size) {
    throw std::invalid_argument("decode: token id out of vocabulary");
  }

  const std::size_t p = state.tokens_seen;
  const std::size_t H = m.config.hidden();
  const std::size_t D = m.config.head_dim;
  const std::size_t heads = m.config.n_heads;
  const std::size_t bs = m.config.block_size;
  const std::size_t qb = p / bs;
  const std::size_t off = p % bs;
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  const RopeConfig rope{D, m.config.rope_base};
  const double pos = static_cast<double>(p);
  const std::span<const double> pos_span(&pos, 1);

  std::vector<double> x(H);
  std::memcpy(x.data(), m.params.embedding.row(static_cast<std::size_t>(token)),
              H * sizeof(double));

  Matrix xrow(1, H), normed, rotated(1, D);
  std::vector<double> rstd;
  std::vector<double> qrow(H), krow(H), vrow(H), attn_out(H), scores;
  std::vector<const CacheBlock*> blocks;

  for (std::size_t l = 0; l < m.config.n_layers; ++l) {
    const auto& P = m.params.layers[l];
    LayerCache& lc = state.layers[l];

    std::memcpy(xrow.row(0), x.data(), H * sizeof(double));
    detail::rmsnorm_forward(xrow, P.attn_norm, normed, rstd);

    std::fill(qrow.begin(), qrow.end(), 0.0);
    std::fill(krow.begin(), krow.end(), 0.0);
    std::fill(vrow.begin(), vrow.end(), 0.0);
    row_matmul_acc(normed.row(0), P.wq, qrow.data());
    row_matmul_acc(normed.row(0), P.wk, krow.data());
    row_matmul_acc(normed.row(0), P.wv, vrow.data());

    // RoPE the new q and k, head by head, at the absolute position.
    for (std::size_t h = 0; h < heads; ++h) {
      for (double* vec : {qrow.data(), krow.data()}) {
        std::memcpy(rotated.row(0), vec + h * D, D * sizeof(double));
        const Matrix r = rope_apply(rotated, pos_span, rope);
        std::memcpy(vec + h * D, r.row(0), D * sizeof(double));
      }
    }

    if (off == 0) start_block(lc, qb, bs, H);
    CacheBlock& tail = tail_block(lc, qb);
    std::memcpy(tail.k.row(off), krow.data(), H * sizeof(double));
    std::memcpy(tail.v.row(off), vrow.data(), H * sizeof(double));
    tail.filled = off + 1;

    collect_retained(lc, blocks);

    // Streamed attention: per head, fold the retained blocks (ascending)
    // into one online-softmax chunk.
    kern::scale(qrow.data(), scale, H);
    for (std::size_t h = 0; h < heads; ++h) {
      const double* qh = qrow.data() + h * D;
      StreamChunk run;
      for (const CacheBlock* b : blocks) {
        scores.resize(b->filled);
        for (std::size_t t = 0; t < b->filled; ++t) {
          scores[t] = kern::dot(qh, b->k.row(t) + h * D, D);
        }
        StreamChunk chunk;
        chunk.out.assign(D, 0.0);
        chunk.stat.m = kern::reduce_max(scores.data(), scores.size());
        double lsum = 0.0;
        for (std::size_t t = 0; t < b->filled; ++t) {
          const double e = std::exp(scores[t] - chunk.stat.m);
          lsum += e;
          kern::axpy(chunk.out.data(), e, b->v.row(t) + h * D, D);
        }
        chunk.stat.l = lsum;
        kern::scale(chunk.out.data(), 1.0 / lsum, D);
        run = merge_stats(run, chunk);
      }
      std::memcpy(attn_out.data() + h * D, run.out.data(), D * sizeof(double));
    }

    row_matmul_acc(attn_out.data(), P.wo, x.data());

    std::memcpy(xrow.row(0), x.data(), H * sizeof(double));
    detail::rmsnorm_forward(xrow, P.ffn_norm, normed, rstd);
    std::vector<double> u(m.config.ffn_dim(), 0.0);
    row_matmul_acc(normed.row(0), P.w1, u.data());
    Matrix a(1, u.size());
    for (std::size_t i = 0; i < u.size(); ++i) a.data[i] = detail::gelu(u[i]);
    row_matmul_acc(a.row(0), P.w2, x.data());
  }

  std::memcpy(xrow.row(0), x.data(), H * sizeof(double));
  detail::rmsnorm_forward(xrow, m.params.final_norm, normed, rstd);
  std::vector<double> logits(m.config.vocab_size, 0.0);
  row_matmul_acc(normed.row(0), m.params.unembed, logits.data());

  state.tokens_seen = p + 1;
  return logits;
}

std::vector<std::size_t> retained_block_indices(const KVCacheState& state,
                                                std::size_t layer) {
  if (layer >= state.layers.size()) {
    throw std::invalid_argument("retained_block_indices: layer out of range");
  }
  std::vector<const CacheBlock*> blocks;
  collect_retained(state.layers[layer], blocks);
  std::vector<std::size_t> idx;
  idx.reserve(blocks.size());
  for (const auto* b : blocks) idx.push_back(b->block_index);
  return idx;
}

std::size_t cache_bytes(const KVCacheState& state) {
  if (state.model == nullptr) return 0;
  const std::size_t H = state.model->config.hidden();
  const std::size_t bs = state.model->config.block_size;
  std::vector<const CacheBlock*> blocks;
  std::size_t total = 0;
  for (const auto& lc : state.layers) {
    collect_retained(lc, blocks);
    const std::size_t tokens = std::min(blocks.size() * bs, state.tokens_seen);
    total += tokens * 2 * H * state.bytes_per_element;
  }
  return total;
}

std::size_t cache_bytes_closed_form(const ModelConfig& cfg, const LayerMap& map,
                                    std::size_t seq_len,
                                    std::size_t bytes_per_element) {
  std::size_t total = 0;
  for (const auto& spec : map.layers) {
    total += retained_token_count(spec, seq_len) * 2 * cfg.hidden() * bytes_per_element;
  }
  return total;
}

std::string cache_summary(const KVCacheState& state) {
  std::ostringstream os;
  const std::size_t bs = state.model ? state.model->config.block_size : 0;
  os << "tokens_seen=" << state.tokens_seen << " total_bytes=" << cache_bytes(state)
     << "\n";
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    const auto idx = retained_block_indices(state, l);
    os << "layer " << l << " [" << format_pattern(state.layers[l].spec) << "]"
       << " blocks(" << idx.size() << "):";
    for (auto b : idx) os << " " << b;
    os << " tokens=" << std::min(idx.size() * bs, state.tokens_seen) << "\n";
  }
  return os.str();
}

}  // namespace hourglass
