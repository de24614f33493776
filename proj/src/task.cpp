#include "hourglass/task.hpp"

#include <stdexcept>
#include <string>

namespace hourglass {

TaskKind parse_task(std::string_view name) {
  if (name == "copy") return TaskKind::copy;
  if (name == "needle") return TaskKind::needle;
  throw std::invalid_argument("unknown task '" + std::string(name) +
                              "' (expected copy|needle)");
}

std::string_view task_name(TaskKind k) {
  return k == TaskKind::copy ? "copy" : "needle";
}

namespace {

void check_config(const TaskConfig& cfg) {
  if (cfg.vocab_size < 4)
    throw std::invalid_argument("task vocab_size must be >= 4");
  const std::size_t min_len = cfg.kind == TaskKind::needle ? 5 : 4;
  if (cfg.seq_len < min_len)
    throw std::invalid_argument("task seq_len too short for " +
                                std::string(task_name(cfg.kind)));
}

std::int32_t draw_filler(const TaskConfig& cfg, std::mt19937_64& rng) {
  // Fillers and values share [2, vocab); 0 is reserved, 1 is the probe.
  std::uniform_int_distribution<std::int32_t> dist(
      2, static_cast<std::int32_t>(cfg.vocab_size) - 1);
  return dist(rng);
}

// Only positions whose next token is actually derivable from the prefix
// are supervised; everything else is masked with -1. Random fillers carry
// no learnable signal, and averaging their cross entropy into the loss
// would dilute the retrieval gradient by a factor of the sequence length.
void fill_targets_from(TaskSample& s, std::size_t first_supervised) {
  const std::size_t n = s.tokens.size();
  s.targets.assign(n, -1);
  for (std::size_t t = first_supervised; t + 1 < n; ++t)
    s.targets[t] = s.tokens[t + 1];
}

TaskSample make_needle(const TaskConfig& cfg, std::size_t depth,
                       std::mt19937_64& rng) {
  check_config(cfg);
  if (depth > max_needle_depth(cfg))
    throw std::invalid_argument("needle depth out of range");
  const std::size_t n = cfg.seq_len;
  TaskSample s;
  s.tokens.resize(n);
  for (std::size_t t = 0; t < n; ++t) s.tokens[t] = draw_filler(cfg, rng);
  const std::int32_t value = draw_filler(cfg, rng);
  s.tokens[depth] = kProbeToken;
  s.tokens[depth + 1] = value;
  s.tokens[n - 2] = kProbeToken;
  s.tokens[n - 1] = value;  // ground truth; never fed back as a target input
  s.query_pos = n - 2;
  s.answer = value;
  s.needle_depth = depth;
  // The only predictable position is the query: the value's first
  // appearance is freshly drawn and cannot be anticipated.
  s.targets.assign(n, -1);
  s.targets[s.query_pos] = value;
  return s;
}

TaskSample make_copy(const TaskConfig& cfg, std::mt19937_64& rng) {
  check_config(cfg);
  const std::size_t n = cfg.seq_len;
  const std::size_t half = n / 2;
  TaskSample s;
  s.tokens.resize(n);
  for (std::size_t t = 0; t < half; ++t) s.tokens[t] = draw_filler(cfg, rng);
  for (std::size_t t = half; t < n; ++t) s.tokens[t] = s.tokens[t - half];
  s.query_pos = n - 2;
  s.answer = s.tokens[n - 1];
  // From position half-1 on, the next token is a repeat of the first half.
  fill_targets_from(s, half - 1);
  return s;
}

}  // namespace

std::size_t max_needle_depth(const TaskConfig& cfg) {
  // Pair occupies (depth, depth+1); keep it clear of the trailing probe at
  // n-2 so the planted value is never overwritten.
  return cfg.seq_len - 4;
}

TaskSample sample_task(const TaskConfig& cfg, std::mt19937_64& rng) {
  if (cfg.kind == TaskKind::copy) return make_copy(cfg, rng);
  check_config(cfg);
  std::uniform_int_distribution<std::size_t> dist(0, max_needle_depth(cfg));
  const std::size_t depth = dist(rng);
  return make_needle(cfg, depth, rng);
}

TaskSample sample_needle_at(const TaskConfig& cfg, std::size_t depth,
                            std::mt19937_64& rng) {
  TaskConfig c = cfg;
  c.kind = TaskKind::needle;
  return make_needle(c, depth, rng);
}

}  // namespace hourglass
