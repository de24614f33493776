#include "hourglass/numerics.hpp"

#include <cmath>
#include <stdexcept>

#include "hourglass/simd.hpp"

namespace hourglass {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

SoftmaxResult softmax_rows(const Matrix& x) {
  SoftmaxResult r;
  r.probs = Matrix(x.rows, x.cols);
  r.lse.resize(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    const double m = kern::reduce_max(xi, x.cols);
    if (m == kNegInf) {
      throw std::domain_error("softmax_rows: row " + std::to_string(i) +
                              " is fully masked");
    }
    if (!std::isfinite(m)) {
      throw std::invalid_argument("softmax_rows: non-finite logit in row " +
                                  std::to_string(i));
    }
    double* pi = r.probs.row(i);
    double l = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      if (std::isnan(xi[j])) {
        throw std::invalid_argument("softmax_rows: NaN logit in row " +
                                    std::to_string(i));
      }
      const double e = std::exp(xi[j] - m);  // exp(-inf) == 0 handles masks
      pi[j] = e;
      l += e;
    }
    const double inv = 1.0 / l;
    for (std::size_t j = 0; j < x.cols; ++j) pi[j] *= inv;
    r.lse[i] = m + std::log(l);
  }
  return r;
}

StreamChunk merge_stats(const StreamChunk& a, const StreamChunk& b) {
  // Empty side is the identity (and keeps out's width from the other side).
  if (a.stat.l == 0.0) return b;
  if (b.stat.l == 0.0) return a;
  if (a.out.size() != b.out.size()) {
    throw std::invalid_argument("merge_stats: output widths differ");
  }
  StreamChunk r;
  r.stat.m = a.stat.m > b.stat.m ? a.stat.m : b.stat.m;
  const double wa = std::exp(a.stat.m - r.stat.m) * a.stat.l;
  const double wb = std::exp(b.stat.m - r.stat.m) * b.stat.l;
  r.stat.l = wa + wb;
  const double ca = wa / r.stat.l;
  const double cb = wb / r.stat.l;
  r.out.resize(a.out.size());
  for (std::size_t j = 0; j < r.out.size(); ++j) {
    r.out[j] = ca * a.out[j] + cb * b.out[j];
  }
  return r;
}

StreamChunk make_chunk(std::span<const double> scores, const Matrix& values) {
  if (scores.size() != values.rows) {
    throw std::invalid_argument("make_chunk: score/value count mismatch");
  }
  StreamChunk c;
  c.out.assign(values.cols, 0.0);
  if (scores.empty()) return c;
  c.stat.m = kern::reduce_max(scores.data(), scores.size());
  if (c.stat.m == kNegInf) {
    // Entirely masked chunk: contributes nothing, identity under merge.
    c.stat.m = kNegInf;
    c.stat.l = 0.0;
    return c;
  }
  double l = 0.0;
  for (std::size_t t = 0; t < scores.size(); ++t) {
    const double e = std::exp(scores[t] - c.stat.m);
    l += e;
    kern::axpy(c.out.data(), e, values.row(t), values.cols);
  }
  c.stat.l = l;
  kern::scale(c.out.data(), 1.0 / l, c.out.size());
  return c;
}

namespace {

Matrix rope_impl(const Matrix& x, std::span<const double> positions,
                 const RopeConfig& cfg, double sign) {
  if (cfg.head_dim % 2 != 0 || cfg.head_dim == 0) {
    throw std::invalid_argument("rope: head_dim must be even and positive");
  }
  if (x.cols != cfg.head_dim) {
    throw std::invalid_argument("rope: matrix width != head_dim");
  }
  if (positions.size() != x.rows) {
    throw std::invalid_argument("rope: one position per row required");
  }
  const std::size_t pairs = cfg.head_dim / 2;
  std::vector<double> inv_freq(pairs);
  for (std::size_t i = 0; i < pairs; ++i) {
    inv_freq[i] = std::pow(cfg.base, -2.0 * static_cast<double>(i) /
                                         static_cast<double>(cfg.head_dim));
  }
  Matrix out(x.rows, x.cols);
  for (std::size_t t = 0; t < x.rows; ++t) {
    const double* xi = x.row(t);
    double* oi = out.row(t);
    for (std::size_t i = 0; i < pairs; ++i) {
      const double angle = sign * positions[t] * inv_freq[i];
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      const double x0 = xi[2 * i];
      const double x1 = xi[2 * i + 1];
      oi[2 * i] = x0 * c - x1 * s;
      oi[2 * i + 1] = x0 * s + x1 * c;
    }
  }
  return out;
}

}  // namespace

Matrix rope_apply(const Matrix& x, std::span<const double> positions,
                  const RopeConfig& cfg) {
  return rope_impl(x, positions, cfg, 1.0);
}

Matrix rope_apply_inverse(const Matrix& x, std::span<const double> positions,
                          const RopeConfig& cfg) {
  return rope_impl(x, positions, cfg, -1.0);
}

}  // namespace hourglass
