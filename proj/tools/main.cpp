// hourglass — command-line front end for the sparse-attention library.
//
// Subcommands:
//   equiv      blocked kernel vs dense reference, CSV of per-case deviations
//   gradcheck  analytic gradients vs central finite differences
//   bench      wall-clock timings, dense baseline vs blocked kernel
//   train-toy  train a small hybrid model on a synthetic retrieval task
//   cost       analytic FLOP / KV-byte accounting and sweeps
//
// Exit codes: 0 success, 1 failed check or diverged run, 2 usage error.
// Every CSV starts with a deterministic metadata comment (tool, version,
// seed, config hash); the timestamp lives on its own comment line so
// reruns differ only there.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hourglass/costmodel.hpp"
#include "hourglass/csv.hpp"
#include "hourglass/harness.hpp"
#include "hourglass/kvcache.hpp"
#include "hourglass/model.hpp"
#include "hourglass/simd.hpp"
#include "hourglass/sparsity.hpp"
#include "hourglass/task.hpp"
#include "hourglass/trainer.hpp"
#include "hourglass/version.hpp"

namespace hg = hourglass;

namespace {

struct CommonOpts {
  std::uint64_t seed = 2026;
  std::string out = "out";
  std::string backend = "auto";
};

void add_common(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--seed", c.seed, "Seed for all randomness in this run")
      ->capture_default_str();
  cmd->add_option("--out", c.out, "Output directory for CSV/checkpoint files")
      ->capture_default_str();
  cmd->add_option("--backend", c.backend,
                  "Kernel backend: auto|scalar|avx2")
      ->capture_default_str();
}

void apply_backend(const CommonOpts& c) {
  if (!hg::kern::set_backend_by_name(c.backend))
    throw std::invalid_argument("backend '" + c.backend +
                                "' not available on this machine");
}

std::filesystem::path out_path(const CommonOpts& c, const char* name) {
  std::filesystem::create_directories(c.out);
  return std::filesystem::path(c.out) / name;
}

template <typename T>
std::string join(const std::vector<T>& v, char sep = ';') {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    if constexpr (std::is_same_v<T, std::string>)
      s += v[i];
    else
      s += std::to_string(v[i]);
  }
  return s;
}

// ---- equiv ----------------------------------------------------------------

struct EquivCmd {
  CommonOpts common;
  std::vector<std::string> patterns;
  std::vector<std::size_t> sizes = {64, 256, 1024};
  std::vector<std::size_t> dims = {8, 16};
  std::size_t block_size = 16;
  double tolerance = 1e-10;
  bool inject_skip_diagonal = false;
};

int run_equiv_cmd(const EquivCmd& cmd) {
  apply_backend(cmd.common);
  hg::harness::EquivOptions opt;
  for (const auto& p : cmd.patterns)
    opt.patterns.push_back(hg::parse_pattern(p, cmd.block_size));
  opt.sizes = cmd.sizes;
  opt.head_dims = cmd.dims;
  opt.block_size = cmd.block_size;
  opt.seed = cmd.common.seed;
  opt.tolerance = cmd.tolerance;
  opt.inject_skip_diagonal = cmd.inject_skip_diagonal;

  const auto cases = hg::harness::run_equiv(opt);

  std::vector<std::string> pattern_names;
  for (const auto& p : opt.patterns.empty() ? hg::harness::default_equiv_patterns()
                                            : opt.patterns)
    pattern_names.push_back(hg::format_pattern(p));
  const std::string canonical =
      "equiv patterns=" + join(pattern_names) + " sizes=" + join(cmd.sizes) +
      " dims=" + join(cmd.dims) + " block=" + std::to_string(cmd.block_size) +
      " tol=" + hg::fmt_double(cmd.tolerance) +
      " inject=" + std::to_string(cmd.inject_skip_diagonal) +
      " backend=" + cmd.common.backend;

  hg::CsvWriter csv(out_path(cmd.common, "equiv.csv"));
  csv.prologue("hourglass equiv", cmd.common.seed, canonical,
               {"pattern", "n_tokens", "head_dim", "block_size",
                "tiles_blocked", "tiles_expected", "max_abs_dev",
                "max_rel_dev", "pass", "error"});
  for (const auto& c : cases) {
    csv.row({hg::format_pattern(c.spec), std::to_string(c.n),
             std::to_string(c.head_dim), std::to_string(cmd.block_size),
             std::to_string(c.tiles_blocked), std::to_string(c.tiles_expected),
             hg::fmt_double(c.max_abs_dev), hg::fmt_double(c.max_rel_dev),
             c.pass ? "1" : "0", c.error});
  }

  std::size_t failed = 0;
  for (const auto& c : cases) {
    if (!c.pass) {
      ++failed;
      std::cout << "FAIL " << hg::format_pattern(c.spec) << " n=" << c.n
                << " d=" << c.head_dim
                << (c.error.empty()
                        ? " max_rel_dev=" + hg::fmt_double(c.max_rel_dev)
                        : " error: " + c.error)
                << '\n';
    }
  }
  std::cout << "equiv: " << (cases.size() - failed) << "/" << cases.size()
            << " cases passed, backend=" << hg::kern::backend_name(hg::kern::active_backend())
            << '\n';
  return failed == 0 ? 0 : 1;
}

// ---- gradcheck ------------------------------------------------------------

struct GradcheckCmd {
  CommonOpts common;
  double attention_tol = 1e-6;
  double model_tol = 1e-5;
};

int run_gradcheck_cmd(const GradcheckCmd& cmd) {
  apply_backend(cmd.common);
  hg::harness::GradcheckOptions opt;
  opt.seed = cmd.common.seed;
  opt.attention_tol = cmd.attention_tol;
  opt.model_tol = cmd.model_tol;
  const auto cases = hg::harness::run_gradcheck(opt);

  const std::string canonical =
      "gradcheck attn_tol=" + hg::fmt_double(cmd.attention_tol) +
      " model_tol=" + hg::fmt_double(cmd.model_tol) +
      " backend=" + cmd.common.backend;
  hg::CsvWriter csv(out_path(cmd.common, "gradcheck.csv"));
  csv.prologue("hourglass gradcheck", cmd.common.seed, canonical,
               {"check", "max_rel_err", "tolerance", "pass"});
  std::size_t failed = 0;
  for (const auto& c : cases) {
    csv.row({c.name, hg::fmt_double(c.max_rel_err), hg::fmt_double(c.tol),
             c.pass ? "1" : "0"});
    if (!c.pass) {
      ++failed;
      std::cout << "FAIL " << c.name
                << " max_rel_err=" << hg::fmt_double(c.max_rel_err) << '\n';
    }
  }
  std::cout << "gradcheck: " << (cases.size() - failed) << "/" << cases.size()
            << " groups passed\n";
  return failed == 0 ? 0 : 1;
}

// ---- bench ----------------------------------------------------------------

struct BenchCmd {
  CommonOpts common;
  std::vector<std::size_t> sizes = {1024, 4096};
  std::string pattern = "sink:1,32";
  std::size_t block_size = 64;
  std::size_t dim = 64;
  std::size_t reps = 5;
  unsigned threads = 1;
  bool no_dense = false;
  bool no_backward = false;
};

int run_bench_cmd(const BenchCmd& cmd) {
  apply_backend(cmd.common);
  hg::harness::BenchOptions opt;
  opt.sizes = cmd.sizes;
  opt.pattern = hg::parse_pattern(cmd.pattern, cmd.block_size);
  opt.block_size = cmd.block_size;
  opt.head_dim = cmd.dim;
  opt.reps = cmd.reps;
  opt.threads = cmd.threads;
  opt.seed = cmd.common.seed;
  opt.include_dense = !cmd.no_dense;
  opt.include_backward = !cmd.no_backward;
  const auto rows = hg::harness::run_bench(opt);

  const std::string canonical =
      "bench sizes=" + join(cmd.sizes) + " pattern=" + cmd.pattern +
      " block=" + std::to_string(cmd.block_size) +
      " dim=" + std::to_string(cmd.dim) + " reps=" + std::to_string(cmd.reps) +
      " threads=" + std::to_string(cmd.threads) +
      " dense=" + std::to_string(!cmd.no_dense) +
      " backward=" + std::to_string(!cmd.no_backward) +
      " backend=" + cmd.common.backend;
  hg::CsvWriter csv(out_path(cmd.common, "bench.csv"));
  // Timing columns are measurements and naturally vary between runs; the
  // deterministic part of the row (tiles, flops) does not.
  csv.prologue("hourglass bench", cmd.common.seed, canonical,
               {"impl", "n_tokens", "pattern", "block_size", "head_dim",
                "threads", "reps", "forward_ms", "backward_ms", "tiles",
                "qk_mac_flops"});
  for (const auto& r : rows) {
    csv.row({r.impl, std::to_string(r.n), cmd.pattern,
             std::to_string(cmd.block_size), std::to_string(cmd.dim),
             std::to_string(cmd.threads), std::to_string(cmd.reps),
             hg::fmt_ms(r.forward_ms), hg::fmt_ms(r.backward_ms),
             std::to_string(r.tiles), std::to_string(r.qk_flops)});
    std::cout << r.impl << " n=" << r.n << " fwd=" << hg::fmt_ms(r.forward_ms)
              << "ms bwd=" << hg::fmt_ms(r.backward_ms)
              << "ms tiles=" << r.tiles << '\n';
  }
  return 0;
}

// ---- train-toy ------------------------------------------------------------

struct TrainToyCmd {
  CommonOpts common;
  std::string task = "needle";
  std::size_t seq_len = 512;
  std::size_t vocab = 64;
  std::size_t layers = 6;
  std::size_t heads = 4;
  std::size_t head_dim = 8;
  std::size_t ffn_mult = 4;
  std::size_t block_size = 16;
  std::string pattern = "sink:1,2";
  std::string placement = "middle";
  double full_fraction = 1.0 / 3.0;
  std::size_t steps = 1200;
  std::size_t batch = 8;
  std::string curriculum;  // "len:steps,len:steps,..."; empty = single stage
  double lr = 1e-3;
  std::size_t warmup = 50;
  std::uint64_t data_seed = 1;
  std::size_t log_every = 25;
  double early_stop_acc = 2.0;  // > 1 disables
  std::size_t eval_per_decile = 20;
  std::uint64_t eval_seed = 99;
};

int run_train_toy_cmd(const TrainToyCmd& cmd) {
  apply_backend(cmd.common);
  if (cmd.seq_len > 4096 || cmd.layers > 16 ||
      cmd.heads * cmd.head_dim > 512)
    throw std::invalid_argument(
        "train-toy is a toy: seq_len <= 4096, layers <= 16, hidden <= 512");

  hg::ModelConfig mc;
  mc.n_layers = cmd.layers;
  mc.n_heads = cmd.heads;
  mc.head_dim = cmd.head_dim;
  mc.ffn_mult = cmd.ffn_mult;
  mc.vocab_size = cmd.vocab;
  mc.block_size = cmd.block_size;
  mc.seed = cmd.common.seed;

  const hg::PatternSpec sparse = hg::parse_pattern(cmd.pattern, cmd.block_size);
  hg::LayerMap map;
  if (cmd.full_fraction == 0.0) {
    map.layers.assign(cmd.layers, sparse);  // all-sparse ablation
  } else {
    map = hg::build_layer_map(cmd.layers, sparse,
                              hg::parse_placement(cmd.placement),
                              cmd.full_fraction);
  }

  hg::TaskConfig task;
  task.kind = hg::parse_task(cmd.task);
  task.seq_len = cmd.seq_len;
  task.vocab_size = cmd.vocab;

  hg::TrainOptions opt;
  opt.steps = cmd.steps;
  opt.batch_size = cmd.batch;
  opt.warmup_steps = cmd.warmup;
  opt.adam.lr = cmd.lr;
  opt.data_seed = cmd.data_seed;
  opt.log_every = cmd.log_every;
  opt.early_stop_acc = cmd.early_stop_acc;
  if (!cmd.curriculum.empty()) {
    // "len:steps,len:steps,..." — e.g. "16:700,64:150,512:150".
    std::stringstream ss(cmd.curriculum);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos)
        throw std::invalid_argument("bad curriculum stage '" + item +
                                    "' (want len:steps)");
      hg::CurriculumStage st;
      st.seq_len = std::stoul(item.substr(0, colon));
      st.steps = std::stoul(item.substr(colon + 1));
      opt.curriculum.push_back(st);
    }
    if (opt.curriculum.empty() ||
        opt.curriculum.back().seq_len != cmd.seq_len)
      throw std::invalid_argument(
          "curriculum must end at --seq-len so evaluation matches training");
  }

  const std::string canonical =
      "train-toy task=" + cmd.task + " seq=" + std::to_string(cmd.seq_len) +
      " vocab=" + std::to_string(cmd.vocab) +
      " layers=" + std::to_string(cmd.layers) +
      " heads=" + std::to_string(cmd.heads) +
      " head_dim=" + std::to_string(cmd.head_dim) +
      " ffn_mult=" + std::to_string(cmd.ffn_mult) +
      " block=" + std::to_string(cmd.block_size) + " pattern=" + cmd.pattern +
      " placement=" + cmd.placement +
      " frac=" + hg::fmt_double(cmd.full_fraction) +
      " steps=" + std::to_string(cmd.steps) +
      " batch=" + std::to_string(cmd.batch) +
      (cmd.curriculum.empty() ? std::string()
                              : " curriculum=" + cmd.curriculum) +
      " lr=" + hg::fmt_double(cmd.lr) +
      " warmup=" + std::to_string(cmd.warmup) +
      " data_seed=" + std::to_string(cmd.data_seed) +
      " early=" + hg::fmt_double(cmd.early_stop_acc) +
      " backend=" + cmd.common.backend;

  const hg::TrainResult result = hg::train_toy(mc, map, task, opt);

  hg::CsvWriter log_csv(out_path(cmd.common, "train_log.csv"));
  log_csv.prologue("hourglass train-toy", cmd.common.seed, canonical,
                   {"step", "seq_len", "loss", "lr", "tiles"});
  for (const auto& r : result.log)
    log_csv.row({std::to_string(r.step), std::to_string(r.seq_len),
                 hg::fmt_double_short(r.loss), hg::fmt_double_short(r.lr),
                 std::to_string(r.tiles)});

  if (result.diverged) {
    std::cout << "train-toy: DIVERGED (" << result.divergence_reason << ")\n";
    return 1;
  }

  hg::save_checkpoint(result.model,
                      out_path(cmd.common, "checkpoint.lgen").string());

  if (task.kind == hg::TaskKind::needle) {
    const hg::EvalResult eval = hg::eval_needle(
        result.model, task, cmd.eval_per_decile, cmd.eval_seed);
    hg::CsvWriter eval_csv(out_path(cmd.common, "eval.csv"));
    eval_csv.prologue("hourglass train-toy", cmd.common.seed, canonical,
                      {"decile", "count", "hits", "accuracy"});
    for (std::size_t d = 0; d < 10; ++d)
      eval_csv.row({std::to_string(d), std::to_string(eval.decile_count[d]),
                    std::to_string(eval.decile_hits[d]),
                    hg::fmt_double_short(eval.decile_accuracy[d])});
    eval_csv.row({"overall",
                  std::to_string(cmd.eval_per_decile * 10),
                  std::to_string(static_cast<std::size_t>(
                      eval.accuracy * static_cast<double>(cmd.eval_per_decile * 10) +
                      0.5)),
                  hg::fmt_double_short(eval.accuracy)});
    std::cout << "train-toy: steps=" << result.steps_done
              << (result.early_stopped ? " (early stop)" : "")
              << " final_loss="
              << hg::fmt_double_short(result.log.empty() ? 0.0
                                                         : result.log.back().loss)
              << " needle_acc=" << hg::fmt_double_short(eval.accuracy) << '\n';
  } else {
    std::cout << "train-toy: steps=" << result.steps_done << " final_loss="
              << hg::fmt_double_short(result.log.empty() ? 0.0
                                                         : result.log.back().loss)
              << '\n';
  }
  return 0;
}

// ---- cost -----------------------------------------------------------------

struct CostCmd {
  CommonOpts common;
  std::size_t seq_len = 131072;
  std::size_t heads = 32;
  std::size_t head_dim = 128;
  std::size_t l_full = 12;
  std::size_t l_sparse = 20;
  std::string pattern = "sink:1,32";
  std::size_t block_size = 64;
  std::size_t ffn_mult = 0;
  std::size_t bytes_per_element = 2;
  std::string convention = "token-exact";
  std::vector<std::size_t> sweep = {5, 7, 12, 32};
};

int run_cost_cmd(const CostCmd& cmd) {
  hg::CostConfig base;
  base.seq_len = cmd.seq_len;
  base.n_heads = cmd.heads;
  base.head_dim = cmd.head_dim;
  base.l_full = cmd.l_full;
  base.l_sparse = cmd.l_sparse;
  base.sparse = hg::parse_pattern(cmd.pattern, cmd.block_size);
  base.ffn_mult = cmd.ffn_mult;
  base.bytes_per_element = cmd.bytes_per_element;
  if (cmd.convention == "token-exact")
    base.convention = hg::FlopsConvention::token_exact;
  else if (cmd.convention == "tile")
    base.convention = hg::FlopsConvention::tile_granular;
  else
    throw std::invalid_argument("convention must be token-exact|tile");

  const std::size_t total_layers = cmd.l_full + cmd.l_sparse;
  std::vector<std::size_t> fulls = cmd.sweep;
  if (std::find(fulls.begin(), fulls.end(), cmd.l_full) == fulls.end())
    fulls.push_back(cmd.l_full);
  std::sort(fulls.begin(), fulls.end());

  const std::string canonical =
      "cost seq=" + std::to_string(cmd.seq_len) +
      " heads=" + std::to_string(cmd.heads) +
      " head_dim=" + std::to_string(cmd.head_dim) +
      " l_full=" + std::to_string(cmd.l_full) +
      " l_sparse=" + std::to_string(cmd.l_sparse) +
      " pattern=" + cmd.pattern + " block=" + std::to_string(cmd.block_size) +
      " ffn_mult=" + std::to_string(cmd.ffn_mult) +
      " bpe=" + std::to_string(cmd.bytes_per_element) +
      " convention=" + cmd.convention + " sweep=" + join(cmd.sweep);

  hg::CsvWriter csv(out_path(cmd.common, "cost.csv"));
  csv.prologue(
      "hourglass cost", cmd.common.seed, canonical,
      {"n_tokens", "n_layers", "l_full", "l_sparse", "pattern", "block_size",
       "convention", "train_flops_full", "train_flops_hybrid", "train_ratio",
       "prefill_ratio", "kv_bytes_full", "kv_bytes_hybrid", "kv_ratio",
       "kv_reduction_pct", "train_speedup", "prefill_speedup",
       "decode_speedup"});

  for (std::size_t f : fulls) {
    if (f > total_layers) continue;
    hg::CostConfig cc = base;
    cc.l_full = f;
    cc.l_sparse = total_layers - f;
    const hg::CostReport rep = hg::layer_costs(cc);
    csv.row({std::to_string(cc.seq_len), std::to_string(total_layers),
             std::to_string(cc.l_full), std::to_string(cc.l_sparse),
             cmd.pattern, std::to_string(cmd.block_size), cmd.convention,
             hg::fmt_double_short(rep.train_flops_full),
             hg::fmt_double_short(rep.train_flops_sparse),
             hg::fmt_double_short(rep.train_ratio),
             hg::fmt_double_short(rep.prefill_ratio),
             std::to_string(rep.kv_bytes_full),
             std::to_string(rep.kv_bytes_sparse),
             hg::fmt_double_short(rep.kv_ratio),
             hg::fmt_double_short(100.0 * (1.0 - rep.kv_ratio)),
             hg::fmt_double_short(rep.train_speedup),
             hg::fmt_double_short(rep.prefill_speedup),
             hg::fmt_double_short(rep.decode_speedup)});
    std::cout << "l_full=" << cc.l_full << "/" << total_layers
              << " train_ratio=" << hg::fmt_double_short(rep.train_ratio)
              << " kv_reduction="
              << hg::fmt_double_short(100.0 * (1.0 - rep.kv_ratio)) << "%"
              << " decode_speedup=" << hg::fmt_double_short(rep.decode_speedup)
              << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blocked sparse-attention kernels, hybrid models, and their "
               "verification suites"};
  app.set_version_flag("--version", hg::kVersion);
  app.require_subcommand(1);
  // Global: `hourglass --config run.ini <subcommand>`; keys live in
  // [subcommand] sections (or dotted: `equiv.seed=9`).
  app.set_config("--config", "",
                 "Read options from an INI/TOML file with [subcommand] "
                 "sections");

  EquivCmd equiv;
  auto* equiv_cmd = app.add_subcommand(
      "equiv", "Compare the blocked kernel against the dense reference");
  add_common(equiv_cmd, equiv.common);
  equiv_cmd->add_option("--pattern", equiv.patterns,
                        "Pattern (repeatable): full | sink:S,W | stride:K");
  equiv_cmd->add_option("--sizes", equiv.sizes, "Sequence lengths")
      ->delimiter(',')->capture_default_str();
  equiv_cmd->add_option("--dims", equiv.dims, "Head dimensions")
      ->delimiter(',')->capture_default_str();
  equiv_cmd->add_option("--block-size", equiv.block_size, "Tokens per block")
      ->capture_default_str();
  equiv_cmd->add_option("--tolerance", equiv.tolerance,
                        "Max allowed relative deviation")
      ->capture_default_str();
  equiv_cmd->add_flag("--inject-skip-diagonal", equiv.inject_skip_diagonal,
                      "Negative control: corrupt the iteration layout; the "
                      "suite must then fail");

  GradcheckCmd gradcheck;
  auto* gradcheck_cmd = app.add_subcommand(
      "gradcheck", "Check analytic gradients against finite differences");
  add_common(gradcheck_cmd, gradcheck.common);
  gradcheck_cmd->add_option("--attention-tol", gradcheck.attention_tol,
                            "Tolerance for attention kernel gradients")
      ->capture_default_str();
  gradcheck_cmd->add_option("--model-tol", gradcheck.model_tol,
                            "Tolerance for end-to-end model gradients")
      ->capture_default_str();

  BenchCmd bench;
  auto* bench_cmd =
      app.add_subcommand("bench", "Time dense baseline vs blocked kernel");
  add_common(bench_cmd, bench.common);
  bench_cmd->add_option("--sizes", bench.sizes, "Sequence lengths")
      ->delimiter(',')->capture_default_str();
  bench_cmd->add_option("--pattern", bench.pattern, "Sparse pattern")
      ->capture_default_str();
  bench_cmd->add_option("--block-size", bench.block_size, "Tokens per block")
      ->capture_default_str();
  bench_cmd->add_option("--dim", bench.dim, "Head dimension")
      ->capture_default_str();
  bench_cmd->add_option("--reps", bench.reps, "Timed repetitions (median)")
      ->capture_default_str();
  bench_cmd->add_option("--threads", bench.threads, "Worker threads")
      ->capture_default_str();
  bench_cmd->add_flag("--no-dense", bench.no_dense, "Skip the dense baseline");
  bench_cmd->add_flag("--no-backward", bench.no_backward,
                      "Time the forward pass only");

  TrainToyCmd train;
  auto* train_cmd = app.add_subcommand(
      "train-toy", "Train a small hybrid model on a synthetic task");
  add_common(train_cmd, train.common);
  train_cmd->add_option("--task", train.task, "needle | copy")
      ->capture_default_str();
  train_cmd->add_option("--seq-len", train.seq_len, "Sequence length")
      ->capture_default_str();
  train_cmd->add_option("--vocab", train.vocab, "Vocabulary size")
      ->capture_default_str();
  train_cmd->add_option("--layers", train.layers, "Transformer layers")
      ->capture_default_str();
  train_cmd->add_option("--heads", train.heads, "Attention heads")
      ->capture_default_str();
  train_cmd->add_option("--head-dim", train.head_dim, "Per-head dimension")
      ->capture_default_str();
  train_cmd->add_option("--ffn-mult", train.ffn_mult, "FFN width multiplier")
      ->capture_default_str();
  train_cmd->add_option("--block-size", train.block_size, "Tokens per block")
      ->capture_default_str();
  train_cmd->add_option("--pattern", train.pattern,
                        "Sparse pattern for sparse layers")
      ->capture_default_str();
  train_cmd->add_option("--placement", train.placement,
                        "Full-layer placement: bottom|middle|top|interleave")
      ->capture_default_str();
  train_cmd->add_option("--full-fraction", train.full_fraction,
                        "Fraction of layers running full attention "
                        "(0 = all sparse)")
      ->capture_default_str();
  train_cmd->add_option("--steps", train.steps, "Optimizer steps")
      ->capture_default_str();
  train_cmd->add_option("--batch", train.batch,
                        "Sequences accumulated per optimizer step")
      ->capture_default_str();
  train_cmd->add_option(
      "--curriculum", train.curriculum,
      "Length curriculum 'len:steps,len:steps,...'; must end at --seq-len");
  train_cmd->add_option("--lr", train.lr, "Peak learning rate")
      ->capture_default_str();
  train_cmd->add_option("--warmup", train.warmup, "Linear warmup steps")
      ->capture_default_str();
  train_cmd->add_option("--data-seed", train.data_seed, "Task sampling seed")
      ->capture_default_str();
  train_cmd->add_option("--log-every", train.log_every, "Log cadence")
      ->capture_default_str();
  train_cmd->add_option("--early-stop-acc", train.early_stop_acc,
                        "Stop when probe accuracy reaches this (>1 disables)")
      ->capture_default_str();
  train_cmd->add_option("--eval-per-decile", train.eval_per_decile,
                        "Eval sequences per depth decile")
      ->capture_default_str();
  train_cmd->add_option("--eval-seed", train.eval_seed, "Evaluation seed")
      ->capture_default_str();

  CostCmd cost;
  auto* cost_cmd = app.add_subcommand(
      "cost", "Analytic FLOP and KV-byte accounting");
  add_common(cost_cmd, cost.common);
  cost_cmd->add_option("--seq-len", cost.seq_len, "Sequence length")
      ->capture_default_str();
  cost_cmd->add_option("--heads", cost.heads, "Attention heads")
      ->capture_default_str();
  cost_cmd->add_option("--head-dim", cost.head_dim, "Per-head dimension")
      ->capture_default_str();
  cost_cmd->add_option("--l-full", cost.l_full, "Full-attention layers")
      ->capture_default_str();
  cost_cmd->add_option("--l-sparse", cost.l_sparse, "Sparse layers")
      ->capture_default_str();
  cost_cmd->add_option("--pattern", cost.pattern, "Sparse pattern")
      ->capture_default_str();
  cost_cmd->add_option("--block-size", cost.block_size, "Tokens per block")
      ->capture_default_str();
  cost_cmd->add_option("--ffn-mult", cost.ffn_mult,
                       "FFN multiplier (0 leaves FFN out)")
      ->capture_default_str();
  cost_cmd->add_option("--bytes-per-element", cost.bytes_per_element,
                       "KV cache bytes per element")
      ->capture_default_str();
  cost_cmd->add_option("--convention", cost.convention,
                       "token-exact | tile")
      ->capture_default_str();
  cost_cmd->add_option("--sweep", cost.sweep,
                       "Full-layer counts to sweep")
      ->delimiter(',')->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (equiv_cmd->parsed()) return run_equiv_cmd(equiv);
    if (gradcheck_cmd->parsed()) return run_gradcheck_cmd(gradcheck);
    if (bench_cmd->parsed()) return run_bench_cmd(bench);
    if (train_cmd->parsed()) return run_train_toy_cmd(train);
    if (cost_cmd->parsed()) return run_cost_cmd(cost);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
