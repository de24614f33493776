#pragma once

#include <limits>
#include <span>
#include <vector>

#include "hourglass/matrix.hpp"

// Shared numerically-careful primitives: masked row softmax with
// log-sum-exp, the online-softmax merge used by streaming decode, and
// rotary position embedding.

namespace hourglass {

struct SoftmaxResult {
  Matrix probs;             // same shape as input; masked entries become 0
  std::vector<double> lse;  // per-row log(sum(exp(x))), max-shifted internally
};

// Row-wise softmax over a logit matrix. Entries equal to -inf are treated
// as masked and come out as exactly 0. Throws std::domain_error if a row
// has no finite entry (softmax over an empty support is undefined) and
// std::invalid_argument if a logit is NaN or +inf.
SoftmaxResult softmax_rows(const Matrix& x);

// Running statistics of an online softmax over a prefix of scores:
// m is the max score seen, l the sum of exp(score - m). An empty stream is
// {m = -inf, l = 0}.
struct StreamStat {
  double m = -std::numeric_limits<double>::infinity();
  double l = 0.0;
};

// One chunk of a streamed softmax-weighted sum: the stats plus the chunk's
// *normalized* output row (sum of p_j * v_j with p the chunk-local
// softmax). Keeping the row normalized means a finished chunk is directly
// usable and merging rescales both sides.
struct StreamChunk {
  StreamStat stat;
  std::vector<double> out;
};

// Merge two disjoint chunks of the same stream. Associative and
// commutative up to rounding; an empty chunk (l == 0) is the identity.
// Throws std::invalid_argument if the output rows disagree in width.
StreamChunk merge_stats(const StreamChunk& a, const StreamChunk& b);

// Build a chunk from raw scores and value rows: out = softmax(scores) * V
// over just this chunk. values is n x width.
StreamChunk make_chunk(std::span<const double> scores, const Matrix& values);

struct RopeConfig {
  std::size_t head_dim = 0;
  double base = 5'000'000.0;
};

// Rotary position embedding over rows of x (n x head_dim). Channel pair
// (2i, 2i+1) of row t is rotated by angle positions[t] * base^(-2i/d).
// Positions are absolute token indices (fractional values are accepted;
// the unit tests exercise exact quarter turns). Throws
// std::invalid_argument on odd head_dim or shape mismatch.
Matrix rope_apply(const Matrix& x, std::span<const double> positions,
                  const RopeConfig& cfg);

// Rotation by the negated angles — the exact inverse (and transpose) of
// rope_apply, used to push gradients back through the rotation.
Matrix rope_apply_inverse(const Matrix& x, std::span<const double> positions,
                          const RopeConfig& cfg);

}  // namespace hourglass
