#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

// Synthetic next-token tasks that probe whether a model can use long-range
// context.
//
// needle: a (probe, value) pair is planted at a random depth in a filler
// sequence, and the probe token reappears as the second-to-last token. The
// value is unpredictable at its first occurrence but exactly predictable
// at the end — for a model that can retrieve it from wherever the pair
// landed. Accuracy at the query position, bucketed by planting depth, is
// the retrieval metric.
//
// copy: the second half of the sequence repeats the first half; predicting
// it requires attending half a sequence back.

namespace hourglass {

enum class TaskKind { copy, needle };

TaskKind parse_task(std::string_view name);
std::string_view task_name(TaskKind k);

struct TaskConfig {
  TaskKind kind = TaskKind::needle;
  std::size_t seq_len = 512;   // needle needs >= 5, copy >= 4
  std::size_t vocab_size = 64;  // id 1 = probe marker, fillers/values in [2, vocab)
};

struct TaskSample {
  std::vector<std::int32_t> tokens;
  std::vector<std::int32_t> targets;  // tokens shifted left; last = -1 (no target)
  std::size_t query_pos = 0;          // position whose prediction is scored
  std::int32_t answer = -1;           // expected prediction there
  std::size_t needle_depth = 0;       // where the pair was planted (needle only)
};

// Uniform random depth — the training distribution.
TaskSample sample_task(const TaskConfig& cfg, std::mt19937_64& rng);

// Fixed planting depth — evaluation at controlled depths.
TaskSample sample_needle_at(const TaskConfig& cfg, std::size_t depth,
                            std::mt19937_64& rng);

// Valid needle depths are [0, max_needle_depth(cfg)] inclusive.
std::size_t max_needle_depth(const TaskConfig& cfg);

inline constexpr std::int32_t kProbeToken = 1;

}  // namespace hourglass
