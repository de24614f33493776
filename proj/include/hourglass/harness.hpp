#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hourglass/attention.hpp"
#include "hourglass/sparsity.hpp"

// Verification suites shared by the command-line tool and the release
// gate. Each suite returns structured per-case results; callers decide how
// to render them (CSV, console) and map pass/fail to exit codes.

namespace hourglass::harness {

// ---- blocked-vs-dense equivalence ----------------------------------------

struct EquivOptions {
  std::vector<PatternSpec> patterns;          // empty -> default trio
  std::vector<std::size_t> sizes = {64, 256, 1024};
  std::vector<std::size_t> head_dims = {8, 16};
  std::size_t block_size = 16;
  std::uint64_t seed = 2026;
  double tolerance = 1e-10;                   // on relative deviation
  // Negative control: drop the last column of every multi-column layout row
  // before running the blocked kernel. The suite must then FAIL.
  bool inject_skip_diagonal = false;
  std::size_t reference_cap = 8192;           // dense oracle size guard
};

struct EquivCase {
  PatternSpec spec;
  std::size_t n = 0;
  std::size_t head_dim = 0;
  double max_abs_dev = 0.0;   // over outputs and log-sum-exps
  double max_rel_dev = 0.0;   // max_abs_dev / max |dense| magnitude
  std::uint64_t tiles_blocked = 0;
  std::uint64_t tiles_expected = 0;  // layout nonzeros
  bool pass = false;
  std::string error;          // exception text, if the case threw
};

std::vector<EquivCase> run_equiv(const EquivOptions& opt);
bool all_pass(const std::vector<EquivCase>& cases);

// ---- finite-difference gradient checks -----------------------------------

struct GradcheckOptions {
  std::uint64_t seed = 7;
  double attention_tol = 1e-6;
  double model_tol = 1e-5;
  // Central-difference steps. The model loss rounds to ~1e-13 absolute, so
  // its step is larger: at 1e-5 the h-inverse rounding term alone would
  // swamp the tolerance on the small early-training q/k gradients.
  double fd_step = 1e-5;
  double model_fd_step = 1e-4;
};

struct GradCase {
  std::string name;           // e.g. "attention/sink:1,2/dq" or "model/layer0.wq"
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

std::vector<GradCase> run_gradcheck(const GradcheckOptions& opt);
bool all_pass(const std::vector<GradCase>& cases);

// ---- wall-clock benchmark -------------------------------------------------

struct BenchOptions {
  std::vector<std::size_t> sizes = {1024, 4096};
  PatternSpec pattern = PatternSpec::attn_sink(1, 32);
  std::size_t block_size = 64;
  std::size_t head_dim = 64;
  std::size_t reps = 5;       // timed repetitions; median reported
  unsigned threads = 1;
  std::uint64_t seed = 3;
  bool include_dense = true;  // dense rows double as the baseline
  bool include_backward = true;
};

struct BenchRow {
  std::size_t n = 0;
  std::string impl;           // "dense" or "blocked"
  double forward_ms = 0.0;    // median over reps
  double backward_ms = 0.0;   // 0 when backward disabled
  std::uint64_t tiles = 0;    // per forward pass
  std::uint64_t qk_flops = 0; // analytic score+weight FLOPs at tile granularity
};

std::vector<BenchRow> run_bench(const BenchOptions& opt);

// Convenience: the default pattern trio used by the equivalence CLI.
std::vector<PatternSpec> default_equiv_patterns();

}  // namespace hourglass::harness
