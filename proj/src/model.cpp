#include "hourglass/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "hourglass/attention.hpp"
#include "hourglass/numerics.hpp"
#include "hourglass/simd.hpp"
#include "model_internal.hpp"

namespace hourglass {

namespace {
constexpr double kRmsEps = 1e-6;
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kMagic[4] = {'L', 'G', 'E', 'N'};
}  // namespace

void ModelConfig::validate() const {
  if (n_layers == 0) throw std::invalid_argument("model: n_layers must be >= 1");
  if (n_heads == 0) throw std::invalid_argument("model: n_heads must be >= 1");
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw std::invalid_argument("model: head_dim must be positive and even");
  }
  if (ffn_mult == 0) throw std::invalid_argument("model: ffn_mult must be >= 1");
  if (vocab_size < 2) throw std::invalid_argument("model: vocab_size must be >= 2");
  if (block_size == 0) throw std::invalid_argument("model: block_size must be >= 1");
  if (!(rope_base > 1.0)) throw std::invalid_argument("model: rope_base must be > 1");
}

Placement parse_placement(std::string_view name) {
  if (name == "bottom") return Placement::bottom;
  if (name == "middle") return Placement::middle;
  if (name == "top") return Placement::top;
  if (name == "interleave") return Placement::interleave;
  throw std::invalid_argument("unknown placement '" + std::string(name) +
                              "' (expected top|middle|bottom|interleave)");
}

std::string_view placement_name(Placement p) {
  switch (p) {
    case Placement::bottom: return "bottom";
    case Placement::middle: return "middle";
    case Placement::top: return "top";
    case Placement::interleave: return "interleave";
  }
  return "?";
}

std::size_t LayerMap::n_full() const {
  std::size_t n = 0;
  for (const auto& s : layers) {
    if (s.kind == PatternKind::full) ++n;
  }
  return n;
}

LayerMap build_layer_map(std::size_t n_layers, const PatternSpec& sparse,
                         Placement placement, double full_fraction) {
  if (n_layers == 0) throw std::invalid_argument("layer map: n_layers must be >= 1");
  sparse.validate();
  if (!(full_fraction > 0.0) || full_fraction > 1.0) {
    throw std::invalid_argument("layer map: full_fraction must be in (0, 1]");
  }
  const auto n_full = static_cast<std::size_t>(
      std::ceil(full_fraction * static_cast<double>(n_layers)));
  if (n_full == 0 || n_full > n_layers) {
    throw std::invalid_argument("layer map: full_fraction yields no valid layer count");
  }

  LayerMap map;
  map.layers.assign(n_layers, sparse);
  const PatternSpec full = PatternSpec::full(sparse.block_size);
  switch (placement) {
    case Placement::bottom:
      for (std::size_t i = 0; i < n_full; ++i) map.layers[i] = full;
      break;
    case Placement::top:
      for (std::size_t i = 0; i < n_full; ++i) map.layers[n_layers - n_full + i] = full;
      break;
    case Placement::middle: {
      const std::size_t start = (n_layers - n_full) / 2;
      for (std::size_t i = 0; i < n_full; ++i) map.layers[start + i] = full;
      break;
    }
    case Placement::interleave:
      // Full layer i sits at floor((i + 0.5) * L / F): even spacing, and
      // since L/F >= 1 consecutive slots never collide.
      for (std::size_t i = 0; i < n_full; ++i) {
        const auto slot = static_cast<std::size_t>(
            std::floor((static_cast<double>(i) + 0.5) *
                       static_cast<double>(n_layers) / static_cast<double>(n_full)));
        map.layers[slot] = full;
      }
      break;
  }
  return map;
}

namespace {

template <class Params, class Mat>
std::vector<std::pair<std::string, Mat*>> refs_impl(Params& p) {
  std::vector<std::pair<std::string, Mat*>> out;
  out.reserve(2 + p.layers.size() * 8 + 2);
  out.emplace_back("embedding", &p.embedding);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i) + ".";
    auto& L = p.layers[i];
    out.emplace_back(prefix + "attn_norm", &L.attn_norm);
    out.emplace_back(prefix + "wq", &L.wq);
    out.emplace_back(prefix + "wk", &L.wk);
    out.emplace_back(prefix + "wv", &L.wv);
    out.emplace_back(prefix + "wo", &L.wo);
    out.emplace_back(prefix + "ffn_norm", &L.ffn_norm);
    out.emplace_back(prefix + "w1", &L.w1);
    out.emplace_back(prefix + "w2", &L.w2);
  }
  out.emplace_back("final_norm", &p.final_norm);
  out.emplace_back("unembed", &p.unembed);
  return out;
}

}  // namespace

std::vector<std::pair<std::string, Matrix*>> tensor_refs(ModelParams& p) {
  return refs_impl<ModelParams, Matrix>(p);
}

std::vector<std::pair<std::string, const Matrix*>> tensor_refs(const ModelParams& p) {
  return refs_impl<const ModelParams, const Matrix>(p);
}

ModelParams zeros_like(const ModelParams& shape) {
  ModelParams z;
  z.embedding = Matrix(shape.embedding.rows, shape.embedding.cols);
  z.layers.resize(shape.layers.size());
  for (std::size_t i = 0; i < shape.layers.size(); ++i) {
    const auto& s = shape.layers[i];
    auto& L = z.layers[i];
    L.attn_norm = Matrix(s.attn_norm.rows, s.attn_norm.cols);
    L.wq = Matrix(s.wq.rows, s.wq.cols);
    L.wk = Matrix(s.wk.rows, s.wk.cols);
    L.wv = Matrix(s.wv.rows, s.wv.cols);
    L.wo = Matrix(s.wo.rows, s.wo.cols);
    L.ffn_norm = Matrix(s.ffn_norm.rows, s.ffn_norm.cols);
    L.w1 = Matrix(s.w1.rows, s.w1.cols);
    L.w2 = Matrix(s.w2.rows, s.w2.cols);
  }
  z.final_norm = Matrix(shape.final_norm.rows, shape.final_norm.cols);
  z.unembed = Matrix(shape.unembed.rows, shape.unembed.cols);
  return z;
}

HybridModel HybridModel::init(const ModelConfig& config, const LayerMap& map) {
  config.validate();
  if (map.layers.size() != config.n_layers) {
    throw std::invalid_argument("model: layer map size != n_layers");
  }
  for (const auto& spec : map.layers) {
    spec.validate();
    if (spec.block_size != config.block_size) {
      throw std::invalid_argument("model: layer pattern block size != model block size");
    }
  }

  const std::size_t H = config.hidden();
  const std::size_t F = config.ffn_dim();
  const std::size_t V = config.vocab_size;

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  const double resid_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_layers));

  auto draw = [&](std::size_t r, std::size_t c, double s) {
    Matrix m(r, c);
    for (auto& x : m.data) x = dist(rng) * s;
    return m;
  };
  auto ones = [&](std::size_t c) { return Matrix(1, c, 1.0); };

  HybridModel m;
  m.config = config;
  m.map = map;
  m.params.embedding = draw(V, H, 1.0);
  m.params.layers.resize(config.n_layers);
  for (auto& L : m.params.layers) {
    L.attn_norm = ones(H);
    L.wq = draw(H, H, 1.0);
    L.wk = draw(H, H, 1.0);
    L.wv = draw(H, H, 1.0);
    L.wo = draw(H, H, resid_scale);
    L.ffn_norm = ones(H);
    L.w1 = draw(H, F, 1.0);
    L.w2 = draw(F, H, resid_scale);
  }
  m.params.final_norm = ones(H);
  m.params.unembed = draw(H, V, 1.0);
  return m;
}

// --- small building blocks (shared with the decode path) -------------------

namespace detail {

void rmsnorm_forward(const Matrix& x, const Matrix& g, Matrix& y,
                     std::vector<double>& rstd) {
  const std::size_t H = x.cols;
  y = Matrix(x.rows, H);
  rstd.resize(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    const double ms = kern::sum_squares(xi, H) / static_cast<double>(H);
    const double r = 1.0 / std::sqrt(ms + kRmsEps);
    rstd[i] = r;
    double* yi = y.row(i);
    const double* gv = g.row(0);
    for (std::size_t j = 0; j < H; ++j) yi[j] = xi[j] * gv[j] * r;
  }
}

// dx_j = g_j r dy_j - (r^3 x_j / H) * sum_i dy_i g_i x_i ;  dg_j += dy_j x_j r
void rmsnorm_backward(const Matrix& x, const Matrix& g,
                      const std::vector<double>& rstd, const Matrix& dy, Matrix& dx,
                      Matrix& dg) {
  const std::size_t H = x.cols;
  dx = Matrix(x.rows, H);
  const double* gv = g.row(0);
  double* dgv = dg.row(0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    const double* dyi = dy.row(i);
    double* dxi = dx.row(i);
    const double r = rstd[i];
    double inner = 0.0;
    for (std::size_t j = 0; j < H; ++j) inner += dyi[j] * gv[j] * xi[j];
    const double c = r * r * r * inner / static_cast<double>(H);
    for (std::size_t j = 0; j < H; ++j) {
      dxi[j] = gv[j] * r * dyi[j] - c * xi[j];
      dgv[j] += dyi[j] * xi[j] * r;
    }
  }
}

double gelu(double u) { return 0.5 * u * (1.0 + std::erf(u / std::numbers::sqrt2)); }

double dgelu(double u) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(u / std::numbers::sqrt2)) +
         u * inv_sqrt_2pi * std::exp(-0.5 * u * u);
}

void slice_head(const Matrix& src, std::size_t head, std::size_t d, Matrix& dst) {
  dst = Matrix(src.rows, d);
  for (std::size_t i = 0; i < src.rows; ++i) {
    std::memcpy(dst.row(i), src.row(i) + head * d, d * sizeof(double));
  }
}

void scatter_head(Matrix& dst, std::size_t head, std::size_t d, const Matrix& src) {
  for (std::size_t i = 0; i < src.rows; ++i) {
    std::memcpy(dst.row(i) + head * d, src.row(i), d * sizeof(double));
  }
}

}  // namespace detail

namespace {

using detail::dgelu;
using detail::gelu;
using detail::rmsnorm_backward;
using detail::rmsnorm_forward;
using detail::scatter_head;
using detail::slice_head;

void add_inplace(Matrix& a, const Matrix& b) {
  kern::axpy(a.data.data(), 1.0, b.data.data(), a.data.size());
}

struct LayerActs {
  Matrix x_in;
  Matrix h1;
  std::vector<double> rstd1;
  std::vector<Matrix> qh, kh, vh;  // per head; q/k post-RoPE
  std::vector<AttnSaved> attn;
  Matrix attn_cat;
  Matrix x_mid;
  Matrix h2;
  std::vector<double> rstd2;
  Matrix u;  // pre-GELU
  Matrix a;  // post-GELU
};

struct ForwardActs {
  std::vector<LayerActs> layers;
  Matrix x_final;
  Matrix xf;
  std::vector<double> rstd_f;
};

void validate_tokens(const ModelConfig& cfg, std::span<const std::int32_t> tokens) {
  if (tokens.empty()) throw std::invalid_argument("model: empty token sequence");
  for (auto t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
      throw std::invalid_argument("model: token id out of vocabulary");
    }
  }
}

struct KVCapture {
  std::vector<Matrix>* k_layers = nullptr;  // post-RoPE keys, N x H per layer
  std::vector<Matrix>* v_layers = nullptr;
};

Matrix forward_impl(const HybridModel& m, std::span<const std::int32_t> tokens,
                    ForwardActs* acts, std::uint64_t* tiles,
                    const KVCapture* capture = nullptr) {
  validate_tokens(m.config, tokens);
  const std::size_t N = tokens.size();
  const std::size_t H = m.config.hidden();
  const std::size_t D = m.config.head_dim;
  const std::size_t heads = m.config.n_heads;
  const std::size_t bs = m.config.block_size;
  const std::size_t n_blocks = (N + bs - 1) / bs;
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  const RopeConfig rope{D, m.config.rope_base};

  std::vector<double> positions(N);
  for (std::size_t i = 0; i < N; ++i) positions[i] = static_cast<double>(i);

  Matrix x(N, H);
  for (std::size_t i = 0; i < N; ++i) {
    std::memcpy(x.row(i), m.params.embedding.row(static_cast<std::size_t>(tokens[i])),
                H * sizeof(double));
  }

  if (acts) acts->layers.resize(m.config.n_layers);
  if (capture) {
    capture->k_layers->assign(m.config.n_layers, Matrix());
    capture->v_layers->assign(m.config.n_layers, Matrix());
  }

  Matrix h1, q, k, v, proj, h2, u, a, f;
  std::vector<double> rstd1, rstd2;
  for (std::size_t l = 0; l < m.config.n_layers; ++l) {
    const auto& P = m.params.layers[l];
    const BlockLayout layout = build_layout(m.map.layers[l], n_blocks);

    rmsnorm_forward(x, P.attn_norm, h1, rstd1);
    matmul(h1, P.wq, q);
    matmul(h1, P.wk, k);
    matmul(h1, P.wv, v);

    Matrix attn_cat(N, H);
    LayerActs* la = acts ? &acts->layers[l] : nullptr;
    if (la) {
      la->x_in = x;
      la->h1 = h1;
      la->rstd1 = rstd1;
      la->qh.resize(heads);
      la->kh.resize(heads);
      la->vh.resize(heads);
      la->attn.resize(heads);
    }
    Matrix* cap_k = capture ? &(*capture->k_layers)[l] : nullptr;
    Matrix* cap_v = capture ? &(*capture->v_layers)[l] : nullptr;
    if (cap_k) {
      *cap_k = Matrix(N, H);
      *cap_v = v;  // values are not position-encoded; store as projected
    }
    for (std::size_t h = 0; h < heads; ++h) {
      Matrix qh, kh, vh;
      slice_head(q, h, D, qh);
      slice_head(k, h, D, kh);
      slice_head(v, h, D, vh);
      qh = rope_apply(qh, positions, rope);
      kh = rope_apply(kh, positions, rope);
      if (cap_k) scatter_head(*cap_k, h, D, kh);
      AttnForwardResult r = blocked_forward(qh, kh, vh, layout, bs, scale);
      if (tiles) *tiles += r.tiles_visited;
      scatter_head(attn_cat, h, D, r.saved.o);
      if (la) {
        la->qh[h] = std::move(qh);
        la->kh[h] = std::move(kh);
        la->vh[h] = std::move(vh);
        la->attn[h] = std::move(r.saved);
      }
    }

    matmul(attn_cat, P.wo, proj);
    add_inplace(x, proj);
    if (la) {
      la->attn_cat = std::move(attn_cat);
      la->x_mid = x;
    }

    rmsnorm_forward(x, P.ffn_norm, h2, rstd2);
    matmul(h2, P.w1, u);
    a = Matrix(u.rows, u.cols);
    for (std::size_t i = 0; i < u.data.size(); ++i) a.data[i] = gelu(u.data[i]);
    matmul(a, P.w2, f);
    add_inplace(x, f);
    if (la) {
      la->h2 = h2;
      la->rstd2 = rstd2;
      la->u = u;
      la->a = a;
    }
  }

  Matrix xf;
  std::vector<double> rstd_f;
  rmsnorm_forward(x, m.params.final_norm, xf, rstd_f);
  if (acts) {
    acts->x_final = std::move(x);
    acts->xf = xf;
    acts->rstd_f = std::move(rstd_f);
  }
  Matrix logits;
  matmul(xf, m.params.unembed, logits);
  return logits;
}

}  // namespace

Matrix model_forward(const HybridModel& m, std::span<const std::int32_t> tokens,
                     std::uint64_t* tiles) {
  return forward_impl(m, tokens, nullptr, tiles);
}

namespace detail {

Matrix forward_with_kv_capture(const HybridModel& m,
                               std::span<const std::int32_t> tokens,
                               std::vector<Matrix>& k_layers,
                               std::vector<Matrix>& v_layers) {
  KVCapture cap{&k_layers, &v_layers};
  return forward_impl(m, tokens, nullptr, nullptr, &cap);
}

}  // namespace detail

LossResult loss_and_grads(const HybridModel& m, std::span<const std::int32_t> tokens,
                          std::span<const std::int32_t> targets) {
  if (targets.size() != tokens.size()) {
    throw std::invalid_argument("loss: targets must align with tokens");
  }
  for (auto t : targets) {
    if (t >= 0 && static_cast<std::size_t>(t) >= m.config.vocab_size) {
      throw std::invalid_argument("loss: target id out of vocabulary");
    }
  }

  ForwardActs acts;
  LossResult res;
  Matrix logits = forward_impl(m, tokens, &acts, &res.tiles_visited);

  const std::size_t N = tokens.size();
  const std::size_t H = m.config.hidden();
  const std::size_t D = m.config.head_dim;
  const std::size_t heads = m.config.n_heads;
  const std::size_t bs = m.config.block_size;
  const std::size_t n_blocks = (N + bs - 1) / bs;
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  const RopeConfig rope{D, m.config.rope_base};
  std::vector<double> positions(N);
  for (std::size_t i = 0; i < N; ++i) positions[i] = static_cast<double>(i);

  // Cross-entropy over counted positions; d_logits = (softmax - onehot)/n.
  SoftmaxResult sm = softmax_rows(logits);
  std::size_t counted = 0;
  double loss = 0.0;
  for (std::size_t t = 0; t < N; ++t) {
    if (targets[t] < 0) continue;
    ++counted;
    loss += sm.lse[t] - logits(t, static_cast<std::size_t>(targets[t]));
  }
  if (counted == 0) throw std::runtime_error("loss: no counted positions");
  res.loss = loss / static_cast<double>(counted);

  Matrix d_logits = std::move(sm.probs);
  const double inv_count = 1.0 / static_cast<double>(counted);
  for (std::size_t t = 0; t < N; ++t) {
    double* row = d_logits.row(t);
    if (targets[t] < 0) {
      std::memset(row, 0, d_logits.cols * sizeof(double));
      continue;
    }
    row[static_cast<std::size_t>(targets[t])] -= 1.0;
    kern::scale(row, inv_count, d_logits.cols);
  }

  res.grads = zeros_like(m.params);
  auto& G = res.grads;

  // Unembedding and final norm.
  matmul_tn(acts.xf, d_logits, G.unembed, true);
  Matrix d_xf;
  matmul_nt(d_logits, m.params.unembed, d_xf);
  Matrix d_x;
  rmsnorm_backward(acts.x_final, m.params.final_norm, acts.rstd_f, d_xf, d_x,
                   G.final_norm);

  Matrix d_a, d_u, d_h2, d_tmp, d_cat, d_q, d_k, d_v, d_h1;
  for (std::size_t l = m.config.n_layers; l-- > 0;) {
    const auto& P = m.params.layers[l];
    auto& GL = G.layers[l];
    const auto& A = acts.layers[l];
    const BlockLayout layout = build_layout(m.map.layers[l], n_blocks);

    // FFN block (d_x holds the gradient at the layer's output).
    matmul_nt(d_x, P.w2, d_a);
    matmul_tn(A.a, d_x, GL.w2, true);
    d_u = Matrix(d_a.rows, d_a.cols);
    for (std::size_t i = 0; i < d_u.data.size(); ++i) {
      d_u.data[i] = d_a.data[i] * dgelu(A.u.data[i]);
    }
    matmul_tn(A.h2, d_u, GL.w1, true);
    matmul_nt(d_u, P.w1, d_h2);
    rmsnorm_backward(A.x_mid, P.ffn_norm, A.rstd2, d_h2, d_tmp, GL.ffn_norm);
    add_inplace(d_x, d_tmp);

    // Attention block.
    matmul_nt(d_x, P.wo, d_cat);
    matmul_tn(A.attn_cat, d_x, GL.wo, true);
    d_q = Matrix(N, H);
    d_k = Matrix(N, H);
    d_v = Matrix(N, H);
    for (std::size_t h = 0; h < heads; ++h) {
      Matrix d_oh;
      slice_head(d_cat, h, D, d_oh);
      AttnGrads g = blocked_backward(A.qh[h], A.kh[h], A.vh[h], layout, bs, scale,
                                     A.attn[h], d_oh);
      res.tiles_visited += g.tiles_visited;
      // RoPE is a fixed rotation; its adjoint is the inverse rotation.
      Matrix dq = rope_apply_inverse(g.dq, positions, rope);
      Matrix dk = rope_apply_inverse(g.dk, positions, rope);
      scatter_head(d_q, h, D, dq);
      scatter_head(d_k, h, D, dk);
      scatter_head(d_v, h, D, g.dv);
    }
    matmul_tn(A.h1, d_q, GL.wq, true);
    matmul_tn(A.h1, d_k, GL.wk, true);
    matmul_tn(A.h1, d_v, GL.wv, true);
    matmul_nt(d_q, P.wq, d_h1);
    matmul_nt(d_k, P.wk, d_h1, true);
    matmul_nt(d_v, P.wv, d_h1, true);
    rmsnorm_backward(A.x_in, P.attn_norm, A.rstd1, d_h1, d_tmp, GL.attn_norm);
    add_inplace(d_x, d_tmp);
  }

  for (std::size_t t = 0; t < N; ++t) {
    kern::axpy(G.embedding.row(static_cast<std::size_t>(tokens[t])), 1.0, d_x.row(t), H);
  }
  return res;
}

AdamState AdamState::init(const ModelParams& shape) {
  AdamState s;
  s.m = zeros_like(shape);
  s.v = zeros_like(shape);
  s.t = 0;
  return s;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const AdamConfig& cfg) {
  auto p = tensor_refs(params);
  auto g = tensor_refs(grads);
  auto sm = tensor_refs(state.m);
  auto sv = tensor_refs(state.v);
  if (p.size() != g.size() || p.size() != sm.size()) {
    throw std::invalid_argument("adam: parameter/gradient structure mismatch");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& pm = *p[i].second;
    const auto& gm = *g[i].second;
    auto& mm = *sm[i].second;
    auto& vm = *sv[i].second;
    if (!pm.same_shape(gm)) {
      throw std::invalid_argument("adam: gradient shape mismatch at " + p[i].first);
    }
    for (std::size_t e = 0; e < pm.data.size(); ++e) {
      const double gr = gm.data[e];
      if (!std::isfinite(gr)) {
        throw std::runtime_error("adam: non-finite gradient in " + p[i].first);
      }
      mm.data[e] = cfg.beta1 * mm.data[e] + (1.0 - cfg.beta1) * gr;
      vm.data[e] = cfg.beta2 * vm.data[e] + (1.0 - cfg.beta2) * gr * gr;
      const double mhat = mm.data[e] / bc1;
      const double vhat = vm.data[e] / bc2;
      pm.data[e] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// --- checkpoint io ---------------------------------------------------------

namespace {

void write_u32le(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint32_t read_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u64le(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint64_t read_u64le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_doubles_le(std::ostream& os, const std::vector<double>& xs) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(xs.data()),
             static_cast<std::streamsize>(xs.size() * sizeof(double)));
  } else {
    for (double x : xs) write_u64le(os, std::bit_cast<std::uint64_t>(x));
  }
}

void read_doubles_le(std::istream& is, std::vector<double>& xs) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(xs.data()),
            static_cast<std::streamsize>(xs.size() * sizeof(double)));
  } else {
    for (double& x : xs) x = std::bit_cast<double>(read_u64le(is));
  }
}

std::string format_double_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_checkpoint(const HybridModel& m, const std::string& path) {
  std::ostringstream header;
  header << "n_layers=" << m.config.n_layers << "\n"
         << "n_heads=" << m.config.n_heads << "\n"
         << "head_dim=" << m.config.head_dim << "\n"
         << "ffn_mult=" << m.config.ffn_mult << "\n"
         << "vocab_size=" << m.config.vocab_size << "\n"
         << "block_size=" << m.config.block_size << "\n"
         << "rope_base=" << format_double_exact(m.config.rope_base) << "\n"
         << "seed=" << m.config.seed << "\n";
  header << "layers=";
  for (std::size_t i = 0; i < m.map.layers.size(); ++i) {
    if (i) header << ";";
    header << format_pattern(m.map.layers[i]);
  }
  header << "\n";
  const std::string htext = header.str();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  os.write(kMagic, 4);
  write_u32le(os, kCheckpointVersion);
  write_u64le(os, htext.size());
  os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& [name, mat] : tensor_refs(m.params)) {
    write_doubles_le(os, mat->data);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

HybridModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const std::uint32_t version = read_u32le(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  }
  const std::uint64_t hlen = read_u64le(is);
  std::string htext(hlen, '\0');
  is.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw std::runtime_error("checkpoint: truncated header in " + path);

  ModelConfig cfg;
  std::string layers_line;
  std::istringstream hs(htext);
  std::string line;
  while (std::getline(hs, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "n_layers") cfg.n_layers = std::stoull(value);
    else if (key == "n_heads") cfg.n_heads = std::stoull(value);
    else if (key == "head_dim") cfg.head_dim = std::stoull(value);
    else if (key == "ffn_mult") cfg.ffn_mult = std::stoull(value);
    else if (key == "vocab_size") cfg.vocab_size = std::stoull(value);
    else if (key == "block_size") cfg.block_size = std::stoull(value);
    else if (key == "rope_base") cfg.rope_base = std::stod(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "layers") layers_line = value;
  }
  cfg.validate();

  LayerMap map;
  std::size_t start = 0;
  while (start <= layers_line.size() && !layers_line.empty()) {
    auto end = layers_line.find(';', start);
    if (end == std::string::npos) end = layers_line.size();
    map.layers.push_back(
        parse_pattern(layers_line.substr(start, end - start), cfg.block_size));
    start = end + 1;
    if (end == layers_line.size()) break;
  }
  if (map.layers.size() != cfg.n_layers) {
    throw std::runtime_error("checkpoint: layer pattern list does not match n_layers");
  }

  // Build a zero model of the right shape, then fill tensors in order.
  HybridModel m = HybridModel::init(cfg, map);
  for (auto& [name, mat] : tensor_refs(m.params)) {
    read_doubles_le(is, mat->data);
    if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
  }
  // Must be exactly at end of file.
  is.peek();
  if (!is.eof()) throw std::runtime_error("checkpoint: trailing bytes in " + path);
  return m;
}

}  // namespace hourglass
