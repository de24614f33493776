#include "hourglass/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hourglass {

namespace {

double warmup_lr(const TrainOptions& opt, std::size_t step /*0-based*/) {
  if (opt.warmup_steps == 0 || step >= opt.warmup_steps) return opt.adam.lr;
  return opt.adam.lr * static_cast<double>(step + 1) /
         static_cast<double>(opt.warmup_steps);
}

std::size_t argmax_row(const double* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

}  // namespace

double EvalResult::range_accuracy(std::size_t lo, std::size_t hi) const {
  if (lo > hi || hi >= decile_count.size())
    throw std::invalid_argument("bad decile range");
  std::size_t hits = 0, total = 0;
  for (std::size_t i = lo; i <= hi; ++i) {
    hits += decile_hits[i];
    total += decile_count[i];
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

EvalResult eval_needle(const HybridModel& m, const TaskConfig& task,
                       std::size_t per_decile, std::uint64_t seed) {
  if (per_decile == 0) throw std::invalid_argument("per_decile must be > 0");
  TaskConfig cfg = task;
  cfg.kind = TaskKind::needle;
  const std::size_t span = max_needle_depth(cfg) + 1;
  if (span < 10)
    throw std::invalid_argument("seq_len too short for decile evaluation");

  std::mt19937_64 rng(seed);
  EvalResult r;
  std::size_t hits = 0, total = 0;
  for (std::size_t dec = 0; dec < 10; ++dec) {
    const std::size_t lo = dec * span / 10;
    const std::size_t hi = (dec + 1) * span / 10;  // exclusive
    std::uniform_int_distribution<std::size_t> dist(lo, hi - 1);
    for (std::size_t s = 0; s < per_decile; ++s) {
      const TaskSample sample = sample_needle_at(cfg, dist(rng), rng);
      const Matrix logits = model_forward(m, sample.tokens);
      const std::size_t pred =
          argmax_row(logits.row(sample.query_pos), logits.cols);
      const bool hit = static_cast<std::int32_t>(pred) == sample.answer;
      r.decile_hits[dec] += hit ? 1 : 0;
      r.decile_count[dec] += 1;
      hits += hit ? 1 : 0;
      total += 1;
    }
    r.decile_accuracy[dec] = static_cast<double>(r.decile_hits[dec]) /
                             static_cast<double>(r.decile_count[dec]);
  }
  r.accuracy = static_cast<double>(hits) / static_cast<double>(total);
  return r;
}

TrainResult train_toy(const ModelConfig& cfg, const LayerMap& map,
                      const TaskConfig& task, const TrainOptions& opt) {
  if (task.vocab_size != cfg.vocab_size)
    throw std::invalid_argument("task vocab_size must match model vocab_size");

  std::vector<CurriculumStage> stages = opt.curriculum;
  if (stages.empty()) stages.push_back({task.seq_len, opt.steps});
  std::size_t total_steps = 0;
  for (const auto& st : stages) {
    if (st.steps == 0 || st.seq_len == 0)
      throw std::invalid_argument("curriculum stage needs seq_len and steps > 0");
    total_steps += st.steps;
  }
  if (total_steps == 0) throw std::invalid_argument("steps must be > 0");

  TrainResult result;
  result.model = HybridModel::init(cfg, map);
  AdamState adam_state = AdamState::init(result.model.params);
  std::mt19937_64 data_rng(opt.data_seed);

  const bool early = opt.early_stop_acc <= 1.0 && task.kind == TaskKind::needle;
  const std::size_t batch = std::max<std::size_t>(1, opt.batch_size);

  std::size_t step = 0;  // global, across stages
  for (const auto& stage : stages) {
    TaskConfig stage_task = task;
    stage_task.seq_len = stage.seq_len;
    // Early-stop probes evaluate at the task's own length, so they are only
    // meaningful once training has reached that length.
    const bool probe_here = early && stage.seq_len == task.seq_len;

    for (std::size_t s = 0; s < stage.steps; ++s, ++step) {
      // Accumulate gradients over a mini-batch of freshly sampled sequences;
      // the update uses the mean gradient, the logged loss the batch mean.
      double mean_loss = 0.0;
      std::uint64_t tiles = 0;
      ModelParams grads;
      for (std::size_t b = 0; b < batch; ++b) {
        const TaskSample sample = sample_task(stage_task, data_rng);
        LossResult lr_res =
            loss_and_grads(result.model, sample.tokens, sample.targets);
        mean_loss += lr_res.loss;
        tiles += lr_res.tiles_visited;
        if (b == 0) {
          grads = std::move(lr_res.grads);
        } else {
          const auto dst = tensor_refs(grads);
          const auto src = tensor_refs(lr_res.grads);
          for (std::size_t t = 0; t < dst.size(); ++t)
            for (std::size_t i = 0; i < dst[t].second->data.size(); ++i)
              dst[t].second->data[i] += src[t].second->data[i];
        }
      }
      mean_loss /= static_cast<double>(batch);
      if (batch > 1) {
        for (const auto& [name, g] : tensor_refs(grads))
          for (double& x : g->data) x /= static_cast<double>(batch);
      }

      if (!std::isfinite(mean_loss) || mean_loss > opt.divergence_loss) {
        result.diverged = true;
        result.divergence_reason = "loss " + std::to_string(mean_loss) +
                                   " at step " + std::to_string(step + 1);
        result.steps_done = step;
        return result;
      }

      AdamConfig ac = opt.adam;
      ac.lr = warmup_lr(opt, step);
      adam_step(result.model.params, grads, adam_state, ac);
      result.steps_done = step + 1;

      if (opt.log_every != 0 &&
          ((step + 1) % opt.log_every == 0 || step + 1 == total_steps)) {
        result.log.push_back({step + 1, stage.seq_len, mean_loss, ac.lr, tiles});
      }

      if (probe_here && step + 1 >= opt.early_eval_from &&
          (step + 1 - opt.early_eval_from) % opt.early_eval_every == 0) {
        // Probe accuracy on a fixed eval stream; stop once good enough. The
        // probe uses uniform depths rather than decile buckets to keep it
        // cheap: per_decile = ceil(sequences/10).
        const std::size_t per_dec = (opt.early_eval_sequences + 9) / 10;
        const EvalResult probe =
            eval_needle(result.model, task, per_dec, opt.early_eval_seed);
        if (probe.accuracy >= opt.early_stop_acc) {
          result.early_stopped = true;
          return result;
        }
      }
    }
  }
  return result;
}

}  // namespace hourglass
