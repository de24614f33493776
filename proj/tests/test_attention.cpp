#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <vector>

#include "hourglass/attention.hpp"
#include "hourglass/sparsity.hpp"

using namespace hourglass;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.data) v = dist(rng);
  return m;
}

// Token-level oracle: materialize the full score matrix with plain loops,
// mask straight from the pattern arithmetic (not the layout), softmax each
// row naively, multiply. Shares no code with the kernels under test.
struct OracleOut {
  Matrix o;
  std::vector<double> lse;
};

OracleOut naive_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                          const PatternSpec& spec, double scale) {
  const std::size_t n = q.rows, d = q.cols;
  OracleOut out{Matrix(n, v.cols), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(n, -kInf);
    for (std::size_t j = 0; j <= i; ++j) {
      if (!is_allowed(spec, i, j)) continue;
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) acc += q(i, t) * k(j, t);
      s[j] = acc * scale;
    }
    double m = -kInf;
    for (double x : s) m = std::max(m, x);
    double denom = 0.0;
    for (double x : s)
      if (x != -kInf) denom += std::exp(x - m);
    out.lse[i] = m + std::log(denom);
    for (std::size_t j = 0; j <= i; ++j) {
      if (s[j] == -kInf) continue;
      const double p = std::exp(s[j] - m) / denom;
      for (std::size_t t = 0; t < v.cols; ++t) out.o(i, t) += p * v(j, t);
    }
  }
  return out;
}

struct Case {
  PatternSpec spec;
  std::size_t n;
};

std::vector<Case> oracle_cases() {
  return {
      {PatternSpec::full(4), 1},    {PatternSpec::full(4), 2},
      {PatternSpec::full(4), 3},    {PatternSpec::full(4), 5},
      {PatternSpec::full(8), 33},   {PatternSpec::full(64), 16},
      {PatternSpec::attn_sink(1, 2, 4), 33},
      {PatternSpec::attn_sink(1, 2, 8), 65},
      {PatternSpec::attn_sink(2, 3, 16), 100},
      {PatternSpec::block_stride(2, 4), 33},
      {PatternSpec::block_stride(3, 8), 65},
      {PatternSpec::block_stride(64, 16), 256},
  };
}

BlockLayout layout_for(const PatternSpec& spec, std::size_t n) {
  return build_layout(spec, (n + spec.block_size - 1) / spec.block_size);
}

}  // namespace

TEST_CASE("blocked forward matches the naive oracle") {
  for (const auto& [spec, n] : oracle_cases()) {
    CAPTURE(format_pattern(spec));
    CAPTURE(n);
    for (std::size_t d : {1ul, 3ul, 8ul}) {
      const Matrix q = random_matrix(n, d, 100 + n + d);
      const Matrix k = random_matrix(n, d, 200 + n + d);
      const Matrix v = random_matrix(n, d, 300 + n + d);
      const double scale = 1.0 / std::sqrt(static_cast<double>(d));
      const auto expect = naive_attention(q, k, v, spec, scale);
      const auto got =
          blocked_forward(q, k, v, layout_for(spec, n), spec.block_size, scale);
      double worst = 0.0;
      for (std::size_t i = 0; i < expect.o.data.size(); ++i)
        worst = std::max(worst,
                         std::abs(got.saved.o.data[i] - expect.o.data[i]));
      for (std::size_t i = 0; i < n; ++i)
        worst = std::max(worst, std::abs(got.saved.lse[i] - expect.lse[i]));
      CHECK(worst <= 1e-10);
    }
  }
}

TEST_CASE("dense and blocked paths agree bit for bit") {
  for (const auto& [spec, n] : oracle_cases()) {
    CAPTURE(format_pattern(spec));
    CAPTURE(n);
    const std::size_t d = 8;
    const Matrix q = random_matrix(n, d, 1 + n);
    const Matrix k = random_matrix(n, d, 2 + n);
    const Matrix v = random_matrix(n, d, 3 + n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const BlockLayout layout = layout_for(spec, n);
    const auto blocked = blocked_forward(q, k, v, layout, spec.block_size, scale);
    const auto dense = dense_attention(q, k, v, layout, spec.block_size, scale);
    CHECK(std::memcmp(blocked.saved.o.data.data(), dense.saved.o.data.data(),
                      blocked.saved.o.data.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(blocked.saved.lse.data(), dense.saved.lse.data(),
                      n * sizeof(double)) == 0);
  }
}

TEST_CASE("work proportionality: tiles visited equals layout nonzeros") {
  for (const auto& [spec, n] : oracle_cases()) {
    const BlockLayout layout = layout_for(spec, n);
    const std::size_t d = 4;
    const Matrix q = random_matrix(n, d, 11);
    const Matrix k = random_matrix(n, d, 12);
    const Matrix v = random_matrix(n, d, 13);
    const auto blocked = blocked_forward(q, k, v, layout, spec.block_size, 0.5);
    CHECK(blocked.tiles_visited == layout.nnz());
    // The dense path iterates every causal tile regardless of the mask.
    const auto dense = dense_attention(q, k, v, layout, spec.block_size, 0.5);
    const std::size_t nb = layout.n_blocks;
    CHECK(dense.tiles_visited == nb * (nb + 1) / 2);
  }
}

TEST_CASE("single-token attention is the identity on v") {
  const Matrix q = random_matrix(1, 6, 1);
  const Matrix k = random_matrix(1, 6, 2);
  const Matrix v = random_matrix(1, 6, 3);
  const auto r = blocked_forward(q, k, v, layout_for(PatternSpec::full(16), 1),
                                 16, 0.3);
  // p = exp(s - s) / 1 = 1 exactly; o = 1 * v with no other contributions.
  CHECK(std::memcmp(r.saved.o.data.data(), v.data.data(),
                    v.data.size() * sizeof(double)) == 0);
}

TEST_CASE("zero queries under full attention average the values") {
  const std::size_t n = 12, d = 5;
  const Matrix q(n, d);  // all zeros -> uniform weights over the prefix
  const Matrix k = random_matrix(n, d, 7);
  const Matrix v = random_matrix(n, d, 8);
  const auto r = blocked_forward(q, k, v, layout_for(PatternSpec::full(4), n),
                                 4, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < d; ++t) {
      double mean = 0.0;
      for (std::size_t j = 0; j <= i; ++j) mean += v(j, t);
      mean /= static_cast<double>(i + 1);
      CHECK(r.saved.o(i, t) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("backward matches central finite differences") {
  const Case cases[] = {
      {PatternSpec::full(4), 10},
      {PatternSpec::attn_sink(1, 2, 4), 18},
      {PatternSpec::block_stride(2, 4), 14},
  };
  for (const auto& [spec, n] : cases) {
    CAPTURE(format_pattern(spec));
    const std::size_t d = 4;
    Matrix q = random_matrix(n, d, 21 + n);
    Matrix k = random_matrix(n, d, 22 + n);
    Matrix v = random_matrix(n, d, 23 + n);
    const Matrix d_o = random_matrix(n, d, 24 + n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const BlockLayout layout = layout_for(spec, n);

    const auto fwd = blocked_forward(q, k, v, layout, spec.block_size, scale);
    const auto grads =
        blocked_backward(q, k, v, layout, spec.block_size, scale, fwd.saved, d_o);
    CHECK(grads.tiles_visited == layout.nnz());

    auto objective = [&] {
      const auto r = blocked_forward(q, k, v, layout, spec.block_size, scale);
      double f = 0.0;
      for (std::size_t i = 0; i < d_o.data.size(); ++i)
        f += d_o.data[i] * r.saved.o.data[i];
      return f;
    };

    const double h = 1e-5;
    Matrix* inputs[3] = {&q, &k, &v};
    const Matrix* analytic[3] = {&grads.dq, &grads.dk, &grads.dv};
    for (int t = 0; t < 3; ++t) {
      double worst = 0.0;
      for (std::size_t i = 0; i < inputs[t]->data.size(); ++i) {
        double& x = inputs[t]->data[i];
        const double saved = x;
        x = saved + h;
        const double fp = objective();
        x = saved - h;
        const double fm = objective();
        x = saved;
        const double fd = (fp - fm) / (2.0 * h);
        const double a = analytic[t]->data[i];
        worst = std::max(worst,
                         std::abs(a - fd) / std::max({std::abs(fd), 1e-3}));
      }
      CHECK(worst <= 1e-6);
    }
  }
}

TEST_CASE("backward degenerate cases") {
  const std::size_t d = 4;
  // Zero upstream gradient -> exactly zero input gradients.
  {
    const std::size_t n = 9;
    const Matrix q = random_matrix(n, d, 1), k = random_matrix(n, d, 2),
                 v = random_matrix(n, d, 3);
    const Matrix d_o(n, d);
    const BlockLayout layout = layout_for(PatternSpec::full(4), n);
    const auto fwd = blocked_forward(q, k, v, layout, 4, 0.5);
    const auto g = blocked_backward(q, k, v, layout, 4, 0.5, fwd.saved, d_o);
    for (double x : g.dq.data) CHECK(x == 0.0);
    for (double x : g.dk.data) CHECK(x == 0.0);
    for (double x : g.dv.data) CHECK(x == 0.0);
  }
  // Single token: softmax weight is constant 1, so dq = dk = 0 and
  // dv = d_o exactly.
  {
    const Matrix q = random_matrix(1, d, 4), k = random_matrix(1, d, 5),
                 v = random_matrix(1, d, 6), d_o = random_matrix(1, d, 7);
    const BlockLayout layout = layout_for(PatternSpec::full(16), 1);
    const auto fwd = blocked_forward(q, k, v, layout, 16, 0.5);
    const auto g = blocked_backward(q, k, v, layout, 16, 0.5, fwd.saved, d_o);
    for (double x : g.dq.data) CHECK(x == 0.0);
    for (double x : g.dk.data) CHECK(x == 0.0);
    CHECK(std::memcmp(g.dv.data.data(), d_o.data.data(),
                      d_o.data.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("forward and backward are run-to-run deterministic") {
  const std::size_t n = 65, d = 8;
  const Matrix q = random_matrix(n, d, 31), k = random_matrix(n, d, 32),
               v = random_matrix(n, d, 33), d_o = random_matrix(n, d, 34);
  const PatternSpec spec = PatternSpec::attn_sink(1, 2, 8);
  const BlockLayout layout = layout_for(spec, n);
  const auto f1 = blocked_forward(q, k, v, layout, 8, 0.25);
  const auto f2 = blocked_forward(q, k, v, layout, 8, 0.25);
  CHECK(std::memcmp(f1.saved.o.data.data(), f2.saved.o.data.data(),
                    f1.saved.o.data.size() * sizeof(double)) == 0);
  const auto g1 = blocked_backward(q, k, v, layout, 8, 0.25, f1.saved, d_o);
  const auto g2 = blocked_backward(q, k, v, layout, 8, 0.25, f1.saved, d_o);
  CHECK(std::memcmp(g1.dq.data.data(), g2.dq.data.data(),
                    g1.dq.data.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(g1.dk.data.data(), g2.dk.data.data(),
                    g1.dk.data.size() * sizeof(double)) == 0);
}

TEST_CASE("threaded forward is bit-identical to serial") {
  const std::size_t n = 333, d = 16;
  const Matrix q = random_matrix(n, d, 41), k = random_matrix(n, d, 42),
               v = random_matrix(n, d, 43);
  const PatternSpec spec = PatternSpec::attn_sink(1, 3, 16);
  const BlockLayout layout = layout_for(spec, n);
  const auto serial = blocked_forward(q, k, v, layout, 16, 0.25, 1);
  const auto threaded = blocked_forward(q, k, v, layout, 16, 0.25, 3);
  CHECK(std::memcmp(serial.saved.o.data.data(), threaded.saved.o.data.data(),
                    serial.saved.o.data.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(serial.saved.lse.data(), threaded.saved.lse.data(),
                    n * sizeof(double)) == 0);
  CHECK(serial.tiles_visited == threaded.tiles_visited);
}

TEST_CASE("error contract") {
  const std::size_t n = 8, d = 4;
  const Matrix q = random_matrix(n, d, 51), k = random_matrix(n, d, 52),
               v = random_matrix(n, d, 53);
  const BlockLayout good = layout_for(PatternSpec::full(4), n);

  // Shape mismatches.
  const Matrix bad_k = random_matrix(n + 1, d, 54);
  CHECK_THROWS_AS(blocked_forward(q, bad_k, v, good, 4, 0.5),
                  std::invalid_argument);
  const Matrix bad_v = random_matrix(n, d + 1, 55);
  CHECK_THROWS_AS(blocked_forward(q, k, bad_v, good, 4, 0.5),
                  std::invalid_argument);

  // Layout that does not cover the sequence.
  const BlockLayout small = layout_for(PatternSpec::full(4), n - 4);
  CHECK_THROWS_AS(blocked_forward(q, k, v, small, 4, 0.5),
                  std::invalid_argument);

  // Non-ascending layout row.
  BlockLayout scrambled = good;
  std::swap(scrambled.col_indices[1], scrambled.col_indices[2]);
  CHECK_THROWS_AS(blocked_forward(q, k, v, scrambled, 4, 0.5),
                  std::invalid_argument);

  // Non-finite scale.
  CHECK_THROWS_AS(blocked_forward(q, k, v, good, 4,
                                  std::numeric_limits<double>::quiet_NaN()),
                  std::invalid_argument);

  // Dense reference refuses sequences beyond its cap.
  const std::size_t big = kDenseReferenceCap + 1;
  const Matrix bq(big, 2), bk(big, 2), bv(big, 2);
  const BlockLayout blay = layout_for(PatternSpec::attn_sink(1, 1, 64), big);
  CHECK_THROWS_AS(dense_attention(bq, bk, bv, blay, 64, 0.5),
                  std::invalid_argument);
}

TEST_CASE("a layout missing diagonal support computes detectably wrong rows") {
  // The forward validates structure (ascending, causal) but deliberately
  // not semantics; a row whose support misses the query's own block must
  // surface as wrong numbers, not silently agree.
  const std::size_t n = 16, d = 4;
  const Matrix q = random_matrix(n, d, 61), k = random_matrix(n, d, 62),
               v = random_matrix(n, d, 63);
  const PatternSpec spec = PatternSpec::full(4);
  const BlockLayout good = layout_for(spec, n);
  BlockLayout faulted = good;
  // Drop the diagonal of the last row (entries are ascending; removing the
  // final index keeps the row valid-looking but wrong).
  faulted.col_indices.erase(faulted.col_indices.begin() +
                            static_cast<std::ptrdiff_t>(faulted.nnz() - 1));
  faulted.row_offsets.back() -= 1;
  const auto good_r = blocked_forward(q, k, v, good, 4, 0.5);
  const auto bad_r = blocked_forward(q, k, v, faulted, 4, 0.5);
  double dev = 0.0;
  for (std::size_t t = 0; t < d; ++t)
    dev = std::max(dev, std::abs(good_r.saved.o(n - 1, t) -
                                 bad_r.saved.o(n - 1, t)));
  CHECK(dev > 1e-3);
}
