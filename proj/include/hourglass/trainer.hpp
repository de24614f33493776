#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hourglass/model.hpp"
#include "hourglass/task.hpp"

// Toy training loop: a mini-batch of freshly sampled sequences per optimizer
// step (gradient accumulation, mean gradient), masked cross entropy, Adam
// with linear warmup. Everything is seeded, so a run is reproducible bit for
// bit on the same machine.

namespace hourglass {

// One stage of a sequence-length curriculum: `steps` optimizer steps with
// training sequences of length `seq_len`. Short early stages let the
// retrieval circuit form cheaply; later stages anneal to the target length.
struct CurriculumStage {
  std::size_t seq_len = 0;
  std::size_t steps = 0;
};

struct TrainOptions {
  std::size_t steps = 1200;       // ignored when a curriculum is given
  std::size_t batch_size = 8;     // sequences accumulated per update
  std::size_t warmup_steps = 50;  // linear 0 -> lr, then constant
  AdamConfig adam{};              // adam.lr is the peak rate
  std::uint64_t data_seed = 1;
  std::size_t log_every = 25;
  // Empty = a single stage of `steps` at the task's own seq_len.
  std::vector<CurriculumStage> curriculum;
  // Early stop: after `early_eval_from` steps, evaluate every
  // `early_eval_every` steps on `early_eval_sequences` needles and stop once
  // accuracy reaches `early_stop_acc`. Set early_stop_acc > 1 to disable.
  double early_stop_acc = 2.0;
  std::size_t early_eval_from = 300;
  std::size_t early_eval_every = 100;
  std::size_t early_eval_sequences = 40;
  std::uint64_t early_eval_seed = 4242;
  // Training diverged if loss exceeds this or goes non-finite.
  double divergence_loss = 20.0;
};

struct TrainLogRow {
  std::size_t step = 0;       // 1-based global step, after the update
  std::size_t seq_len = 0;    // training sequence length at this step
  double loss = 0.0;          // mean pre-update loss over the step's batch
  double lr = 0.0;
  std::uint64_t tiles = 0;    // attention tiles visited across the batch
};

struct TrainResult {
  HybridModel model;
  std::vector<TrainLogRow> log;
  std::size_t steps_done = 0;
  bool diverged = false;
  std::string divergence_reason;
  bool early_stopped = false;
};

TrainResult train_toy(const ModelConfig& cfg, const LayerMap& map,
                      const TaskConfig& task, const TrainOptions& opt);

// Needle retrieval accuracy, bucketed by planting-depth decile (decile i
// covers depths [i/10, (i+1)/10) of the valid range). `per_decile` fresh
// sequences per bucket; prediction = argmax of the query-position logits.
struct EvalResult {
  double accuracy = 0.0;
  std::array<double, 10> decile_accuracy{};
  std::array<std::size_t, 10> decile_hits{};
  std::array<std::size_t, 10> decile_count{};
  // Mean accuracy over a contiguous decile range [lo, hi], inclusive.
  double range_accuracy(std::size_t lo, std::size_t hi) const;
};

EvalResult eval_needle(const HybridModel& m, const TaskConfig& task,
                       std::size_t per_decile, std::uint64_t seed);

}  // namespace hourglass
