#include "hourglass/attention.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "hourglass/simd.hpp"

namespace hourglass {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Shape {
  std::size_t n = 0;         // tokens
  std::size_t d = 0;         // head dim
  std::size_t bs = 0;        // tokens per block
  std::size_t n_blocks = 0;  // ceil(n / bs)
};

Shape validate_inputs(const Matrix& q, const Matrix& k, const Matrix& v,
                      const BlockLayout& layout, std::size_t block_size,
                      double scale) {
  if (!q.same_shape(k) || !q.same_shape(v)) {
    throw std::invalid_argument("attention: q/k/v shapes differ");
  }
  if (q.rows == 0 || q.cols == 0) {
    throw std::invalid_argument("attention: empty input");
  }
  if (block_size == 0) throw std::invalid_argument("attention: block_size must be >= 1");
  if (!std::isfinite(scale)) throw std::invalid_argument("attention: non-finite scale");
  Shape sh;
  sh.n = q.rows;
  sh.d = q.cols;
  sh.bs = block_size;
  sh.n_blocks = (sh.n + sh.bs - 1) / sh.bs;
  if (layout.n_blocks != sh.n_blocks ||
      layout.row_offsets.size() != sh.n_blocks + 1) {
    throw std::invalid_argument("attention: layout does not cover the sequence");
  }
  // Structural sanity: each row ascending and causal. Diagonal presence is
  // *not* required here — the engine raises on an empty-support query row
  // instead, so a deliberately faulted layout produces a detectable wrong
  // answer rather than UB.
  for (std::size_t r = 0; r < sh.n_blocks; ++r) {
    if (layout.row_offsets[r] > layout.row_offsets[r + 1] ||
        layout.row_offsets[r + 1] > layout.col_indices.size()) {
      throw std::invalid_argument("attention: corrupt layout offsets");
    }
    const auto cols = layout.row(r);
    for (std::size_t t = 0; t < cols.size(); ++t) {
      if (cols[t] > r || (t > 0 && cols[t] <= cols[t - 1])) {
        throw std::invalid_argument("attention: layout row not ascending causal");
      }
    }
  }
  return sh;
}

// One engine, two uses. `iter` is the set of tiles whose scores are
// computed (and paid for); a tile is "live" if `mask` is null or contains
// it. The dense oracle iterates every causal tile with the pattern as
// mask; the blocked kernel iterates the pattern itself with no mask. Live
// scores are identical kernel calls in both, and dead ones only ever add
// exp(-inf) == 0 to reductions, so the two paths agree bit for bit.
void forward_rows(const Matrix& qs, const Matrix& k, const Matrix& v,
                  const BlockLayout& iter, const BlockLayout* mask, const Shape& sh,
                  std::size_t r_begin, std::size_t r_end, Matrix& o,
                  std::vector<double>& lse, std::uint64_t& tiles) {
  std::vector<double> buf;  // tile-row score buffer, reused across rows
  const std::size_t tile_elems = sh.bs * sh.bs;
  for (std::size_t r = r_begin; r < r_end; ++r) {
    const auto cols = iter.row(r);
    const std::size_t rows_r = std::min(sh.bs, sh.n - r * sh.bs);
    buf.assign(cols.size() * tile_elems, kNegInf);

    for (std::size_t t = 0; t < cols.size(); ++t) {
      const std::size_t c = cols[t];
      ++tiles;
      const bool live = mask == nullptr || mask->contains(r, c);
      const std::size_t base = c * sh.bs;
      const std::size_t cols_c = std::min(sh.bs, sh.n - base);
      double* tile = buf.data() + t * tile_elems;
      for (std::size_t i = 0; i < rows_r; ++i) {
        const double* qrow = qs.row(r * sh.bs + i);
        // Scores above the diagonal of the diagonal tile are non-causal
        // and never computed by either path.
        const std::size_t jmax = (c == r) ? std::min(i + 1, cols_c) : cols_c;
        double* trow = tile + i * sh.bs;
        for (std::size_t j = 0; j < jmax; ++j) {
          const double s = kern::dot(qrow, k.row(base + j), sh.d);
          trow[j] = live ? s : kNegInf;
        }
      }
    }

    for (std::size_t i = 0; i < rows_r; ++i) {
      const std::size_t gi = r * sh.bs + i;
      double m = kNegInf;
      for (std::size_t t = 0; t < cols.size(); ++t) {
        const double tm = kern::reduce_max(buf.data() + t * tile_elems + i * sh.bs, sh.bs);
        if (tm > m) m = tm;
      }
      if (m == kNegInf) {
        throw std::runtime_error("attention: query row " + std::to_string(gi) +
                                 " has no live score (layout missing diagonal?)");
      }
      // First pass turns scores into exp(s - m) in place and accumulates
      // the denominator; second pass streams the weighted values.
      double l = 0.0;
      for (std::size_t t = 0; t < cols.size(); ++t) {
        double* trow = buf.data() + t * tile_elems + i * sh.bs;
        for (std::size_t j = 0; j < sh.bs; ++j) {
          const double e = std::exp(trow[j] - m);
          trow[j] = e;
          l += e;
        }
      }
      lse[gi] = m + std::log(l);
      const double inv = 1.0 / l;
      double* orow = o.row(gi);
      for (std::size_t t = 0; t < cols.size(); ++t) {
        const std::size_t base = cols[t] * sh.bs;
        const std::size_t cols_c = std::min(sh.bs, sh.n - base);
        const double* trow = buf.data() + t * tile_elems + i * sh.bs;
        for (std::size_t j = 0; j < cols_c; ++j) {
          kern::axpy(orow, trow[j] * inv, v.row(base + j), sh.d);
        }
      }
    }
  }
}

AttnForwardResult run_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                              const BlockLayout& iter, const BlockLayout* mask,
                              const Shape& sh, double scale, unsigned n_threads) {
  Matrix qs = q;
  kern::scale(qs.data.data(), scale, qs.data.size());

  AttnForwardResult res;
  res.saved.o = Matrix(sh.n, sh.d);
  res.saved.lse.assign(sh.n, 0.0);

  if (n_threads <= 1 || sh.n_blocks < 2) {
    forward_rows(qs, k, v, iter, mask, sh, 0, sh.n_blocks, res.saved.o,
                 res.saved.lse, res.tiles_visited);
    return res;
  }

  // Query block rows are independent, so threading is a straight range
  // split; every row is computed exactly as in the serial run.
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(n_threads, sh.n_blocks));
  std::vector<std::uint64_t> tile_counts(workers, 0);
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  const std::size_t chunk = (sh.n_blocks + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t r0 = w * chunk;
    const std::size_t r1 = std::min(sh.n_blocks, r0 + chunk);
    threads.emplace_back([&, w, r0, r1] {
      try {
        forward_rows(qs, k, v, iter, mask, sh, r0, r1, res.saved.o,
                     res.saved.lse, tile_counts[w]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (auto c : tile_counts) res.tiles_visited += c;
  return res;
}

AttnGrads run_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                       const BlockLayout& iter, const BlockLayout* mask,
                       const Shape& sh, double scale, const AttnSaved& saved,
                       const Matrix& d_o) {
  if (!d_o.same_shape(q) || !saved.o.same_shape(q) || saved.lse.size() != sh.n) {
    throw std::invalid_argument("attention backward: saved state / d_o shape mismatch");
  }
  Matrix qs = q;
  kern::scale(qs.data.data(), scale, qs.data.size());

  AttnGrads g;
  g.dq = Matrix(sh.n, sh.d);
  g.dk = Matrix(sh.n, sh.d);
  g.dv = Matrix(sh.n, sh.d);

  // Delta_i = d_o_i . o_i, the softmax-Jacobian correction term.
  std::vector<double> delta(sh.n);
  for (std::size_t i = 0; i < sh.n; ++i) {
    delta[i] = kern::dot(d_o.row(i), saved.o.row(i), sh.d);
  }

  std::vector<double> buf;
  const std::size_t tile_elems = sh.bs * sh.bs;
  for (std::size_t r = 0; r < sh.n_blocks; ++r) {
    const auto cols = iter.row(r);
    const std::size_t rows_r = std::min(sh.bs, sh.n - r * sh.bs);
    buf.assign(cols.size() * tile_elems, kNegInf);

    // Recompute the row's scores exactly as the forward did.
    for (std::size_t t = 0; t < cols.size(); ++t) {
      const std::size_t c = cols[t];
      ++g.tiles_visited;
      const bool live = mask == nullptr || mask->contains(r, c);
      const std::size_t base = c * sh.bs;
      const std::size_t cols_c = std::min(sh.bs, sh.n - base);
      double* tile = buf.data() + t * tile_elems;
      for (std::size_t i = 0; i < rows_r; ++i) {
        const double* qrow = qs.row(r * sh.bs + i);
        const std::size_t jmax = (c == r) ? std::min(i + 1, cols_c) : cols_c;
        double* trow = tile + i * sh.bs;
        for (std::size_t j = 0; j < jmax; ++j) {
          const double s = kern::dot(qrow, k.row(base + j), sh.d);
          trow[j] = live ? s : kNegInf;
        }
      }
    }

    for (std::size_t i = 0; i < rows_r; ++i) {
      const std::size_t gi = r * sh.bs + i;
      const double* dorow = d_o.row(gi);
      for (std::size_t t = 0; t < cols.size(); ++t) {
        const std::size_t base = cols[t] * sh.bs;
        const std::size_t cols_c = std::min(sh.bs, sh.n - base);
        const double* trow = buf.data() + t * tile_elems + i * sh.bs;
        for (std::size_t j = 0; j < cols_c; ++j) {
          // p is the exact forward probability (lse was saved); dead
          // scores give p == 0 and contribute nothing, but the dense
          // path still pays for the tile walk.
          const double p = std::exp(trow[j] - saved.lse[gi]);
          const double dp = kern::dot(dorow, v.row(base + j), sh.d);
          const double ds = p * (dp - delta[gi]);
          kern::axpy(g.dq.row(gi), ds, k.row(base + j), sh.d);
          kern::axpy(g.dk.row(base + j), ds, qs.row(gi), sh.d);
          kern::axpy(g.dv.row(base + j), p, dorow, sh.d);
        }
      }
    }
  }

  // Scores were (scale * q) . k, so the q gradient picks up the scale.
  kern::scale(g.dq.data.data(), scale, g.dq.data.size());
  return g;
}

}  // namespace

AttnForwardResult dense_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                  const BlockLayout& layout, std::size_t block_size,
                                  double scale, std::size_t reference_cap,
                                  unsigned n_threads) {
  const Shape sh = validate_inputs(q, k, v, layout, block_size, scale);
  if (sh.n > reference_cap) {
    throw std::invalid_argument(
        "dense_attention: n_tokens " + std::to_string(sh.n) +
        " exceeds the reference cap " + std::to_string(reference_cap) +
        " (quadratic oracle; raise the cap explicitly if you mean it)");
  }
  const BlockLayout all = build_layout(PatternSpec::full(block_size), sh.n_blocks);
  return run_forward(q, k, v, all, &layout, sh, scale, n_threads);
}

AttnGrads dense_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                         const BlockLayout& layout, std::size_t block_size,
                         double scale, const AttnSaved& saved, const Matrix& d_o,
                         std::size_t reference_cap) {
  const Shape sh = validate_inputs(q, k, v, layout, block_size, scale);
  if (sh.n > reference_cap) {
    throw std::invalid_argument("dense_backward: n_tokens exceeds the reference cap");
  }
  const BlockLayout all = build_layout(PatternSpec::full(block_size), sh.n_blocks);
  return run_backward(q, k, v, all, &layout, sh, scale, saved, d_o);
}

AttnForwardResult blocked_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                                  const BlockLayout& layout, std::size_t block_size,
                                  double scale, unsigned n_threads) {
  const Shape sh = validate_inputs(q, k, v, layout, block_size, scale);
  return run_forward(q, k, v, layout, nullptr, sh, scale, n_threads);
}

AttnGrads blocked_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                           const BlockLayout& layout, std::size_t block_size,
                           double scale, const AttnSaved& saved, const Matrix& d_o) {
  const Shape sh = validate_inputs(q, k, v, layout, block_size, scale);
  return run_backward(q, k, v, layout, nullptr, sh, scale, saved, d_o);
}

}  // namespace hourglass
