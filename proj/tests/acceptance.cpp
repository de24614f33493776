// Release gate. Every shipping claim of the project, verified end to end in
// one binary: numerical equivalence of the sparse kernels, gradient
// correctness, the memory/FLOP arithmetic, decode-cache consistency, the
// measured speedup, and the hybrid-stack training result.
//
// Output: exactly one PASS/FAIL line per criterion; the exit code is the
// number of failures. Tolerances and time limits are deliberately fixed in
// this file — they are the contract the rest of the repository is tested
// against, not tuning knobs. Do not loosen them to make a run green.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hourglass/attention.hpp"
#include "hourglass/costmodel.hpp"
#include "hourglass/harness.hpp"
#include "hourglass/kvcache.hpp"
#include "hourglass/model.hpp"
#include "hourglass/sparsity.hpp"
#include "hourglass/task.hpp"
#include "hourglass/trainer.hpp"

namespace {

using hourglass::PatternSpec;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  va_list args;
  va_start(args, f);
  char buf[512];
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

struct Gate {
  int failures = 0;

  // Runs one criterion body (which returns pass + detail), times it,
  // enforces the wall-clock budget as part of the criterion, and prints
  // the single line. Exceptions fail the criterion instead of the gate.
  template <class Body>
  void criterion(int index, const char* name, double budget_s, Body body) {
    const auto t0 = Clock::now();
    bool pass = false;
    std::string detail;
    try {
      auto [ok, text] = body();
      pass = ok;
      detail = std::move(text);
    } catch (const std::exception& e) {
      pass = false;
      detail = std::string("exception: ") + e.what();
    }
    const double elapsed = seconds_since(t0);
    if (budget_s > 0) {
      detail += fmt("; %.1fs of %.0fs budget", elapsed, budget_s);
      if (elapsed > budget_s) pass = false;
    } else {
      detail += fmt("; %.3fs", elapsed);
    }
    std::printf("%s  criterion %d (%s): %s\n", pass ? "PASS" : "FAIL", index,
                name, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
  }
};

// --- criterion 1: blocked kernel == dense oracle ---------------------------

std::pair<bool, std::string> check_equivalence() {
  using namespace hourglass::harness;
  EquivOptions opt;
  opt.patterns = {
      PatternSpec::full(16),
      PatternSpec::attn_sink(1, 2, 16),
      PatternSpec::attn_sink(1, 32, 16),
      PatternSpec::block_stride(4, 16),
      PatternSpec::block_stride(64, 16),
  };
  opt.sizes = {64, 256, 1024};
  opt.head_dims = {8, 16};
  opt.block_size = 16;
  opt.tolerance = 1e-10;

  const std::vector<EquivCase> cases = run_equiv(opt);
  std::size_t passed = 0;
  double worst = 0.0;
  bool tiles_ok = true;
  for (const EquivCase& c : cases) {
    if (c.pass) ++passed;
    worst = std::max(worst, c.max_rel_dev);
    tiles_ok = tiles_ok && c.tiles_blocked == c.tiles_expected;
  }
  const bool ok = passed == cases.size() && cases.size() == 30 && tiles_ok;
  return {ok, fmt("%zu/%zu pattern/size/dim cases within 1e-10 relative "
                  "(worst %.2e), tile counts exact",
                  passed, cases.size(), worst)};
}

// --- criterion 2: analytic gradients == central differences ----------------

std::pair<bool, std::string> check_gradients() {
  using namespace hourglass::harness;
  GradcheckOptions opt;
  opt.attention_tol = 1e-6;
  opt.model_tol = 1e-5;

  const std::vector<GradCase> cases = run_gradcheck(opt);
  std::size_t passed = 0;
  double worst_attn = 0.0;
  double worst_model = 0.0;
  for (const GradCase& c : cases) {
    if (c.pass) ++passed;
    if (c.name.rfind("attention/", 0) == 0)
      worst_attn = std::max(worst_attn, c.max_rel_err);
    else
      worst_model = std::max(worst_model, c.max_rel_err);
  }
  const bool ok = !cases.empty() && passed == cases.size();
  return {ok, fmt("%zu/%zu checks (attention worst %.2e <= 1e-6, model worst "
                  "%.2e <= 1e-5)",
                  passed, cases.size(), worst_attn, worst_model)};
}

// The deployment-scale configuration the memory and FLOP claims are made
// for: 32 layers (12 full + 20 sink) of 32 heads x 128 dims, sink 1 block
// + window 32 blocks at block size 64, fp16-sized cache entries.
hourglass::CostConfig flagship_config(std::size_t seq_len) {
  hourglass::CostConfig cc;
  cc.seq_len = seq_len;
  cc.n_heads = 32;
  cc.head_dim = 128;
  cc.l_full = 12;
  cc.l_sparse = 20;
  cc.sparse = PatternSpec::attn_sink(1, 32, 64);
  cc.bytes_per_element = 2;
  return cc;
}

// --- criterion 3: KV-cache memory claim ------------------------------------

std::pair<bool, std::string> check_kv_memory() {
  const hourglass::CostReport rep = hourglass::layer_costs(flagship_config(131072));

  const double reduction_pct = (1.0 - rep.kv_ratio) * 100.0;
  const bool reduction_ok = std::abs(reduction_pct - 62.0) <= 1.0;

  const double full_gb = static_cast<double>(rep.kv_bytes_full) / 1e9;
  const bool baseline_ok = std::abs(full_gb - 69.0) / 69.0 <= 0.01;

  // The analytic bytes must equal the decode cache's own accounting.
  hourglass::ModelConfig mc;
  mc.n_layers = 32;
  mc.n_heads = 32;
  mc.head_dim = 128;
  mc.block_size = 64;
  hourglass::LayerMap map;
  map.layers.assign(12, PatternSpec::full(64));
  map.layers.insert(map.layers.end(), 20, PatternSpec::attn_sink(1, 32, 64));
  const std::size_t closed = hourglass::cache_bytes_closed_form(mc, map, 131072, 2);
  const bool cross_ok = closed == rep.kv_bytes_sparse;

  return {reduction_ok && baseline_ok && cross_ok,
          fmt("reduction %.4f%% (within 62%% +- 1pp), all-full cache %.2f GB "
              "(within 1%% of 69 GB), cache accounting cross-check %s",
              reduction_pct, full_gb, cross_ok ? "exact" : "MISMATCH")};
}

// --- criterion 4: FLOP arithmetic ------------------------------------------

std::pair<bool, std::string> check_flops() {
  const hourglass::CostReport rep =
      hourglass::layer_costs(flagship_config(std::size_t{1} << 20));
  const bool ratio_ok = std::abs(rep.train_ratio - 0.375) / 0.375 <= 0.02;

  // Zero-tolerance tie between the analytic tile counts and what the
  // kernel's probe counter actually measures, ragged tails included.
  const std::vector<std::pair<PatternSpec, std::size_t>> probes = {
      {PatternSpec::full(16), 80},
      {PatternSpec::attn_sink(1, 2, 16), 61},
      {PatternSpec::attn_sink(1, 32, 64), 1000},
      {PatternSpec::block_stride(4, 16), 256},
      {PatternSpec::block_stride(64, 64), 130},
  };
  std::mt19937_64 rng(17);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (const auto& [spec, n] : probes) {
    const std::size_t d = 8;
    hourglass::Matrix q(n, d), k(n, d), v(n, d);
    for (auto* m : {&q, &k, &v})
      for (double& x : m->data) x = dist(rng);
    const std::size_t nb = (n + spec.block_size - 1) / spec.block_size;
    const hourglass::BlockLayout layout = hourglass::build_layout(spec, nb);
    const auto out = hourglass::blocked_forward(q, k, v, layout, spec.block_size,
                                                1.0 / std::sqrt(double(d)));
    // Throws on any mismatch, which fails the criterion via the wrapper.
    hourglass::validate_against_kernel(spec, n, d, out.tiles_visited);
  }
  return {ratio_ok,
          fmt("training FLOP ratio %.6f at N=2^20 (within 2%% of 0.375), "
              "analytic tiles == measured tiles on %zu layouts",
              rep.train_ratio, probes.size())};
}

// --- criterion 5: decode cache == batch forward ----------------------------

std::pair<bool, std::string> check_decode() {
  const std::size_t prefill_len = 97;
  const std::size_t decode_steps = 50;
  const std::vector<std::pair<const char*, PatternSpec>> kinds = {
      {"full", PatternSpec::full(8)},
      {"attn_sink", PatternSpec::attn_sink(1, 3, 8)},
      {"block_stride", PatternSpec::block_stride(4, 8)},
  };

  double worst = 0.0;
  bool ring_ok = true;
  for (const auto& [kind_name, spec] : kinds) {
    hourglass::ModelConfig mc;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.head_dim = 8;
    mc.ffn_mult = 2;
    mc.vocab_size = 61;
    mc.block_size = 8;
    mc.seed = 11;
    hourglass::LayerMap map;
    map.layers.assign(mc.n_layers, spec);
    const hourglass::HybridModel m = hourglass::HybridModel::init(mc, map);

    std::mt19937_64 rng(23);
    std::uniform_int_distribution<std::int32_t> tok(0, 60);
    std::vector<std::int32_t> tokens(prefill_len);
    for (auto& t : tokens) t = tok(rng);

    hourglass::KVCacheState state = hourglass::prefill(m, tokens);
    std::vector<std::size_t> retained_counts;
    for (std::size_t s = 0; s < decode_steps; ++s) {
      const std::int32_t next = tok(rng);
      const std::vector<double> logits = hourglass::decode_step(state, next);
      tokens.push_back(next);
      const hourglass::Matrix fresh = hourglass::model_forward(m, tokens);
      const double* ref = fresh.row(fresh.rows - 1);
      for (std::size_t j = 0; j < logits.size(); ++j)
        worst = std::max(worst, std::abs(logits[j] - ref[j]));
      retained_counts.push_back(
          hourglass::retained_block_indices(state, 0).size());
    }
    // Once the rolling window saturates, the retained-block count must
    // stay constant — new blocks reuse the slot of the evicted one.
    const std::size_t peak =
        *std::max_element(retained_counts.begin(), retained_counts.end());
    const auto first_peak =
        std::find(retained_counts.begin(), retained_counts.end(), peak);
    ring_ok = ring_ok && std::all_of(first_peak, retained_counts.end(),
                                     [&](std::size_t c) { return c == peak; });
  }
  return {worst <= 1e-9 && ring_ok,
          fmt("50 decode steps after a %zu-token prefill match the batch "
              "forward within 1e-9 for all three pattern kinds (worst %.2e); "
              "retained-block count constant after saturation",
              prefill_len, worst)};
}

// --- criterion 6: measured wall-clock advantage ----------------------------

std::pair<bool, std::string> check_speedup() {
  using namespace hourglass::harness;
  BenchOptions opt;
  opt.sizes = {1024, 16384};
  opt.pattern = PatternSpec::attn_sink(1, 32, 64);
  opt.block_size = 64;
  opt.head_dim = 64;
  opt.reps = 3;
  opt.threads = 1;
  opt.include_dense = true;
  opt.include_backward = true;

  const std::vector<BenchRow> rows = run_bench(opt);
  auto total = [&](std::size_t n, const char* impl) -> double {
    for (const BenchRow& r : rows)
      if (r.n == n && r.impl == impl) return r.forward_ms + r.backward_ms;
    throw std::runtime_error("bench row missing");
  };
  const double speedup_small = total(1024, "dense") / total(1024, "blocked");
  const double speedup_large = total(16384, "dense") / total(16384, "blocked");
  const bool half_ok = total(16384, "blocked") <= 0.5 * total(16384, "dense");
  const bool grows_ok = speedup_large > speedup_small;
  return {half_ok && grows_ok,
          fmt("single-thread forward+backward at N=16384: blocked %.0f ms vs "
              "dense %.0f ms (%.2fx, needs >= 2x), and the advantage grows "
              "with N (%.2fx at 1024 -> %.2fx at 16384)",
              total(16384, "blocked"), total(16384, "dense"), speedup_large,
              speedup_small, speedup_large)};
}

// --- criterion 7: the hybrid stack actually learns retrieval ---------------

std::pair<bool, std::string> check_training() {
  hourglass::ModelConfig mc;
  mc.n_layers = 3;
  mc.n_heads = 4;
  mc.head_dim = 8;
  mc.ffn_mult = 4;
  mc.vocab_size = 64;
  mc.block_size = 16;
  mc.seed = 2026;

  const PatternSpec sparse = PatternSpec::attn_sink(1, 2, 16);
  const hourglass::LayerMap full_map =
      hourglass::build_layer_map(mc.n_layers, sparse, hourglass::Placement::middle, 1.0);
  const hourglass::LayerMap hybrid_map = hourglass::build_layer_map(
      mc.n_layers, sparse, hourglass::Placement::middle, 1.0 / 3.0);
  hourglass::LayerMap sparse_map;
  sparse_map.layers.assign(mc.n_layers, sparse);

  hourglass::TaskConfig task;
  task.kind = hourglass::TaskKind::needle;
  task.seq_len = 512;
  task.vocab_size = 64;

  // The documented recipe: short sequences while the retrieval circuit
  // forms, then anneal to the target length; 32-sequence batches smooth
  // the shortcut-dominated early gradients.
  hourglass::TrainOptions opt;
  opt.batch_size = 32;
  opt.warmup_steps = 100;
  opt.adam.lr = 1e-3;
  opt.data_seed = 1;
  opt.log_every = 0;
  opt.curriculum = {{16, 700}, {64, 150}, {512, 120}};
  opt.early_stop_acc = 0.97;

  const std::size_t per_decile = 20;
  const std::uint64_t eval_seed = 99;

  // (a) all-full baseline must reach the accuracy bar.
  const hourglass::TrainResult run_full = hourglass::train_toy(mc, full_map, task, opt);
  if (run_full.diverged)
    return {false, "all-full run diverged: " + run_full.divergence_reason};
  const hourglass::EvalResult ev_full =
      hourglass::eval_needle(run_full.model, task, per_decile, eval_seed);
  const bool a_ok = ev_full.accuracy >= 0.90;

  // (b) training *with* the hybrid masks must do at least as well as
  // imposing the same masks on the full-trained model after the fact.
  const hourglass::TrainResult run_hybrid =
      hourglass::train_toy(mc, hybrid_map, task, opt);
  if (run_hybrid.diverged)
    return {false, "hybrid run diverged: " + run_hybrid.divergence_reason};
  const hourglass::EvalResult ev_hybrid =
      hourglass::eval_needle(run_hybrid.model, task, per_decile, eval_seed);
  hourglass::HybridModel masked = run_full.model;
  masked.map = hybrid_map;
  const hourglass::EvalResult ev_masked =
      hourglass::eval_needle(masked, task, per_decile, eval_seed);
  const bool b_ok = ev_hybrid.accuracy >= ev_masked.accuracy;

  // (c) with every layer sparse, depths outside the sink blocks and the
  // final window are structurally unreachable; the hybrid must beat it
  // there. Deciles 2-5 (depths ~100-300 of 0-509) sit squarely in that
  // uncovered middle.
  hourglass::TrainOptions sparse_opt = opt;
  sparse_opt.early_stop_acc = 2.0;  // it never reaches the bar; don't probe
  const hourglass::TrainResult run_sparse =
      hourglass::train_toy(mc, sparse_map, task, sparse_opt);
  if (run_sparse.diverged)
    return {false, "all-sparse run diverged: " + run_sparse.divergence_reason};
  const hourglass::EvalResult ev_sparse =
      hourglass::eval_needle(run_sparse.model, task, per_decile, eval_seed);
  const double mid_sparse = ev_sparse.range_accuracy(2, 5);
  const double mid_hybrid = ev_hybrid.range_accuracy(2, 5);
  const bool c_ok = mid_sparse < mid_hybrid;

  return {a_ok && b_ok && c_ok,
          fmt("needle@512: all-full %.3f (>= 0.90); hybrid-trained %.3f >= "
              "masked-full %.3f; mid-depth deciles 2-5: all-sparse %.3f < "
              "hybrid %.3f",
              ev_full.accuracy, ev_hybrid.accuracy, ev_masked.accuracy,
              mid_sparse, mid_hybrid)};
}

}  // namespace

int main() {
  Gate gate;
  gate.criterion(1, "blocked kernel matches dense oracle", 60, check_equivalence);
  gate.criterion(2, "gradients match finite differences", 120, check_gradients);
  gate.criterion(3, "KV-cache memory claim", 0, check_kv_memory);
  gate.criterion(4, "FLOP accounting", 0, check_flops);
  gate.criterion(5, "decode cache matches batch forward", 60, check_decode);
  gate.criterion(6, "blocked kernel wall-clock advantage", 300, check_speedup);
  gate.criterion(7, "hybrid stack learns long-range retrieval", 1800, check_training);

  std::printf("acceptance: %d/7 criteria passed\n", 7 - gate.failures);
  return gate.failures;
}
