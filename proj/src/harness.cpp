#include "hourglass/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <stdexcept>

#include "hourglass/costmodel.hpp"
#include "hourglass/csv.hpp"
#include "hourglass/model.hpp"

namespace hourglass::harness {

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Matrix m(rows, cols);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : m.data) v = dist(rng);
  return m;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Drop the last column of every layout row that has more than one entry.
// Most rows lose their diagonal; the numbers the kernel then produces are
// wrong in a way the dense comparison must catch.
BlockLayout drop_last_columns(const BlockLayout& layout) {
  BlockLayout faulted;
  faulted.n_blocks = layout.n_blocks;
  faulted.row_offsets.push_back(0);
  for (std::size_t r = 0; r < layout.n_blocks; ++r) {
    const auto row = layout.row(r);
    const std::size_t keep = row.size() > 1 ? row.size() - 1 : row.size();
    for (std::size_t i = 0; i < keep; ++i)
      faulted.col_indices.push_back(row[i]);
    faulted.row_offsets.push_back(faulted.col_indices.size());
  }
  return faulted;
}

}  // namespace

std::vector<PatternSpec> default_equiv_patterns() {
  return {PatternSpec::full(), PatternSpec::attn_sink(1, 32),
          PatternSpec::block_stride(64)};
}

std::vector<EquivCase> run_equiv(const EquivOptions& opt) {
  const std::vector<PatternSpec> patterns =
      opt.patterns.empty() ? default_equiv_patterns() : opt.patterns;
  std::vector<EquivCase> cases;

  for (PatternSpec spec : patterns) {
    spec.block_size = opt.block_size;
    for (std::size_t n : opt.sizes) {
      for (std::size_t d : opt.head_dims) {
        EquivCase c;
        c.spec = spec;
        c.n = n;
        c.head_dim = d;
        try {
          const std::uint64_t stream =
              opt.seed ^ fnv1a64(format_pattern(spec) + "/" +
                                 std::to_string(n) + "/" + std::to_string(d));
          std::mt19937_64 rng(stream);
          const Matrix q = random_matrix(n, d, rng);
          const Matrix k = random_matrix(n, d, rng);
          const Matrix v = random_matrix(n, d, rng);
          const double scale = 1.0 / std::sqrt(static_cast<double>(d));
          const std::size_t nb = (n + opt.block_size - 1) / opt.block_size;
          const BlockLayout layout = build_layout(spec, nb);
          c.tiles_expected = layout.nnz();

          const BlockLayout run_layout =
              opt.inject_skip_diagonal ? drop_last_columns(layout) : layout;
          const AttnForwardResult blocked =
              blocked_forward(q, k, v, run_layout, opt.block_size, scale);
          const AttnForwardResult dense = dense_attention(
              q, k, v, layout, opt.block_size, scale, opt.reference_cap);
          c.tiles_blocked = blocked.tiles_visited;

          double dev = 0.0;
          for (std::size_t i = 0; i < dense.saved.o.data.size(); ++i)
            dev = std::max(dev, std::abs(blocked.saved.o.data[i] -
                                         dense.saved.o.data[i]));
          for (std::size_t i = 0; i < dense.saved.lse.size(); ++i)
            dev = std::max(
                dev, std::abs(blocked.saved.lse[i] - dense.saved.lse[i]));
          const double denom = std::max(max_abs(dense.saved.o.data),
                                        max_abs(dense.saved.lse));
          c.max_abs_dev = dev;
          c.max_rel_dev = denom > 0.0 ? dev / denom : dev;
          c.pass = c.max_rel_dev <= opt.tolerance &&
                   c.tiles_blocked == c.tiles_expected;
        } catch (const std::exception& e) {
          c.error = e.what();
          c.pass = false;
        }
        cases.push_back(std::move(c));
      }
    }
  }
  return cases;
}

bool all_pass(const std::vector<EquivCase>& cases) {
  return !cases.empty() &&
         std::all_of(cases.begin(), cases.end(),
                     [](const EquivCase& c) { return c.pass; });
}

// ---- gradient checks ------------------------------------------------------

namespace {

double attn_objective(const Matrix& q, const Matrix& k, const Matrix& v,
                      const BlockLayout& layout, std::size_t bs, double scale,
                      const Matrix& d_o) {
  const AttnForwardResult r = blocked_forward(q, k, v, layout, bs, scale);
  double f = 0.0;
  for (std::size_t i = 0; i < d_o.data.size(); ++i)
    f += d_o.data[i] * r.saved.o.data[i];
  return f;
}

// Relative error with a floor keyed to the gradient's own scale, so that
// elements near zero do not turn finite-difference noise into failures.
// The absolute part sits above the differencing noise (~1e-11 here):
// early-training q/k gradients are themselves ~1e-5, and dividing noise
// by such a denominator measures the oracle, not the backward pass. A
// genuinely wrong formula on a tensor that small still shows up at
// relative O(1) against the floor.
double max_rel_err(const Matrix& analytic, const Matrix& fd) {
  double fd_max = max_abs(fd.data);
  const double floor_ = std::max(1e-5, 1e-3 * fd_max);
  double worst = 0.0;
  for (std::size_t i = 0; i < fd.data.size(); ++i) {
    const double diff = std::abs(analytic.data[i] - fd.data[i]);
    worst = std::max(worst, diff / std::max(std::abs(fd.data[i]), floor_));
  }
  return worst;
}

// Cross-entropy computed from scratch (no shared softmax code) so the model
// check is a genuinely independent oracle.
double model_loss_only(const HybridModel& m,
                       const std::vector<std::int32_t>& tokens,
                       const std::vector<std::int32_t>& targets) {
  const Matrix logits = model_forward(m, tokens);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    if (targets[i] < 0) continue;
    const double* row = logits.row(i);
    double mx = row[0];
    for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) sum += std::exp(row[j] - mx);
    total += mx + std::log(sum) - row[static_cast<std::size_t>(targets[i])];
    ++count;
  }
  return total / static_cast<double>(count);
}

}  // namespace

std::vector<GradCase> run_gradcheck(const GradcheckOptions& opt) {
  std::vector<GradCase> out;
  const double h = opt.fd_step;

  struct AttnConfig {
    PatternSpec spec;
    std::size_t n, bs, d;
  };
  const AttnConfig attn_cases[] = {
      {PatternSpec::full(), 18, 8, 6},
      {PatternSpec::attn_sink(1, 2), 33, 8, 6},
      {PatternSpec::block_stride(2), 25, 4, 5},
  };

  for (const AttnConfig& ac : attn_cases) {
    std::mt19937_64 rng(opt.seed ^ fnv1a64(format_pattern(ac.spec)));
    Matrix q = random_matrix(ac.n, ac.d, rng);
    Matrix k = random_matrix(ac.n, ac.d, rng);
    Matrix v = random_matrix(ac.n, ac.d, rng);
    const Matrix d_o = random_matrix(ac.n, ac.d, rng);
    const double scale = 1.0 / std::sqrt(static_cast<double>(ac.d));
    const std::size_t nb = (ac.n + ac.bs - 1) / ac.bs;
    const BlockLayout layout = build_layout(ac.spec, nb);

    const AttnForwardResult fwd = blocked_forward(q, k, v, layout, ac.bs, scale);
    const AttnGrads grads =
        blocked_backward(q, k, v, layout, ac.bs, scale, fwd.saved, d_o);

    Matrix* tensors[3] = {&q, &k, &v};
    const Matrix* analytic[3] = {&grads.dq, &grads.dk, &grads.dv};
    const char* names[3] = {"dq", "dk", "dv"};
    for (int t = 0; t < 3; ++t) {
      Matrix fd(tensors[t]->rows, tensors[t]->cols);
      for (std::size_t i = 0; i < fd.data.size(); ++i) {
        double& x = tensors[t]->data[i];
        const double saved = x;
        x = saved + h;
        const double fp = attn_objective(q, k, v, layout, ac.bs, scale, d_o);
        x = saved - h;
        const double fm = attn_objective(q, k, v, layout, ac.bs, scale, d_o);
        x = saved;
        fd.data[i] = (fp - fm) / (2.0 * h);
      }
      GradCase gc;
      gc.name = "attention/" + format_pattern(ac.spec) + "/" + names[t];
      gc.max_rel_err = max_rel_err(*analytic[t], fd);
      gc.tol = opt.attention_tol;
      gc.pass = gc.max_rel_err <= gc.tol;
      out.push_back(std::move(gc));
    }
  }

  // Model: small two-layer hybrid, non-aligned length, ignored positions.
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.head_dim = 4;
  cfg.ffn_mult = 2;
  cfg.vocab_size = 11;
  cfg.block_size = 4;
  cfg.seed = opt.seed + 17;
  LayerMap map;
  map.layers = {PatternSpec::full(cfg.block_size),
                PatternSpec::attn_sink(1, 1, cfg.block_size)};

  HybridModel model = HybridModel::init(cfg, map);
  std::mt19937_64 rng(opt.seed + 29);
  std::uniform_int_distribution<std::int32_t> tok(0, 10);
  std::vector<std::int32_t> tokens(11);
  for (auto& t : tokens) t = tok(rng);
  std::vector<std::int32_t> targets(11);
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) targets[i] = tokens[i + 1];
  targets.back() = -1;
  targets[4] = -1;  // exercise the ignore path mid-sequence

  const LossResult lr = loss_and_grads(model, tokens, targets);

  const auto analytic_refs = tensor_refs(lr.grads);
  auto model_refs = tensor_refs(model.params);
  // Five-point stencil: the loss is much more curved in the embeddings
  // (they feed every rmsnorm) than in the weights, and no single two-point
  // step keeps both truncation and rounding below tolerance. O(h^4)
  // truncation buys enough slack for one step to cover every tensor.
  const double hm = opt.model_fd_step;
  for (std::size_t t = 0; t < model_refs.size(); ++t) {
    Matrix& param = *model_refs[t].second;
    Matrix fd(param.rows, param.cols);
    for (std::size_t i = 0; i < fd.data.size(); ++i) {
      const double saved = param.data[i];
      const auto at = [&](double x) {
        param.data[i] = x;
        return model_loss_only(model, tokens, targets);
      };
      const double fp2 = at(saved + 2.0 * hm);
      const double fp1 = at(saved + hm);
      const double fm1 = at(saved - hm);
      const double fm2 = at(saved - 2.0 * hm);
      param.data[i] = saved;
      fd.data[i] = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * hm);
    }
    GradCase gc;
    gc.name = "model/" + model_refs[t].first;
    gc.max_rel_err = max_rel_err(*analytic_refs[t].second, fd);
    gc.tol = opt.model_tol;
    gc.pass = gc.max_rel_err <= gc.tol;
    out.push_back(std::move(gc));
  }
  return out;
}

bool all_pass(const std::vector<GradCase>& cases) {
  return !cases.empty() &&
         std::all_of(cases.begin(), cases.end(),
                     [](const GradCase& c) { return c.pass; });
}

// ---- benchmark ------------------------------------------------------------

namespace {

double median_ms(std::vector<double>& samples) {
  std::sort(samples.begin(), samples.end());
  return samples[samples.size() / 2];
}

template <typename F>
double time_ms(F&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

}  // namespace

std::vector<BenchRow> run_bench(const BenchOptions& opt) {
  if (opt.reps == 0) throw std::invalid_argument("reps must be > 0");
  std::vector<BenchRow> rows;

  PatternSpec pattern = opt.pattern;
  pattern.block_size = opt.block_size;
  const PatternSpec full = PatternSpec::full(opt.block_size);

  for (std::size_t n : opt.sizes) {
    std::mt19937_64 rng(opt.seed + n);
    const Matrix q = random_matrix(n, opt.head_dim, rng);
    const Matrix k = random_matrix(n, opt.head_dim, rng);
    const Matrix v = random_matrix(n, opt.head_dim, rng);
    const Matrix d_o = random_matrix(n, opt.head_dim, rng);
    const double scale = 1.0 / std::sqrt(static_cast<double>(opt.head_dim));
    const std::size_t nb = (n + opt.block_size - 1) / opt.block_size;
    const BlockLayout layout = build_layout(pattern, nb);

    struct Variant {
      const char* impl;
      bool dense;
      const PatternSpec* flops_pattern;
    };
    std::vector<Variant> variants;
    if (opt.include_dense) variants.push_back({"dense", true, &full});
    variants.push_back({"blocked", false, &pattern});

    for (const Variant& var : variants) {
      BenchRow row;
      row.n = n;
      row.impl = var.impl;
      row.qk_flops = qk_mac_flops(*var.flops_pattern, n, opt.head_dim);

      AttnForwardResult fwd;  // kept for the backward timing
      auto run_fwd = [&] {
        fwd = var.dense ? dense_attention(q, k, v, layout, opt.block_size,
                                          scale, /*reference_cap=*/n,
                                          opt.threads)
                        : blocked_forward(q, k, v, layout, opt.block_size,
                                          scale, opt.threads);
      };
      run_fwd();  // warm up
      row.tiles = fwd.tiles_visited;
      std::vector<double> samples;
      for (std::size_t r = 0; r < opt.reps; ++r)
        samples.push_back(time_ms(run_fwd));
      row.forward_ms = median_ms(samples);

      if (opt.include_backward) {
        auto run_bwd = [&] {
          if (var.dense) {
            (void)dense_backward(q, k, v, layout, opt.block_size, scale,
                                 fwd.saved, d_o, /*reference_cap=*/n);
          } else {
            (void)blocked_backward(q, k, v, layout, opt.block_size, scale,
                                   fwd.saved, d_o);
          }
        };
        run_bwd();  // warm up
        std::vector<double> bsamples;
        for (std::size_t r = 0; r < opt.reps; ++r)
          bsamples.push_back(time_ms(run_bwd));
        row.backward_ms = median_ms(bsamples);
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace hourglass::harness
