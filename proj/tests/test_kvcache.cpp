#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "hourglass/kvcache.hpp"
#include "hourglass/model.hpp"
#include "hourglass/sparsity.hpp"

using namespace hourglass;

namespace {

HybridModel make_model(const std::vector<PatternSpec>& specs,
                       std::size_t block_size, std::size_t heads = 2,
                       std::size_t head_dim = 4, std::uint64_t seed = 11) {
  ModelConfig cfg;
  cfg.n_layers = specs.size();
  cfg.n_heads = heads;
  cfg.head_dim = head_dim;
  cfg.ffn_mult = 2;
  cfg.vocab_size = 29;
  cfg.block_size = block_size;
  cfg.seed = seed;
  LayerMap map;
  map.layers = specs;
  return HybridModel::init(cfg, map);
}

std::vector<std::int32_t> random_tokens(std::size_t n, std::size_t vocab,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::int32_t> t(n);
  for (auto& x : t) x = static_cast<std::int32_t>(rng() % vocab);
  return t;
}

// The invariant at the heart of the cache: what a layer retains is exactly
// the layout row of the block holding the newest position.
void check_retained_matches_layout(const KVCacheState& st) {
  const std::size_t bs = st.model->config.block_size;
  const std::size_t last_block = (st.tokens_seen - 1) / bs;
  for (std::size_t l = 0; l < st.layers.size(); ++l) {
    const BlockLayout layout =
        build_layout(st.layers[l].spec, last_block + 1);
    const auto row = layout.row(last_block);
    const std::vector<std::size_t> expect(row.begin(), row.end());
    CHECK(retained_block_indices(st, l) == expect);
  }
}

void check_bytes_match_closed_form(const KVCacheState& st) {
  CHECK(cache_bytes(st) ==
        cache_bytes_closed_form(st.model->config, st.model->map,
                                st.tokens_seen, st.bytes_per_element));
}

}  // namespace

TEST_CASE("prefill retains exactly the layout row of the last block") {
  const std::vector<std::vector<PatternSpec>> maps = {
      {PatternSpec::full(8)},
      {PatternSpec::attn_sink(1, 2, 8)},
      {PatternSpec::block_stride(3, 8)},
      {PatternSpec::full(8), PatternSpec::attn_sink(2, 1, 8),
       PatternSpec::block_stride(2, 8)},
  };
  for (const auto& specs : maps) {
    const HybridModel m = make_model(specs, 8);
    for (std::size_t n : {1ul, 7ul, 8ul, 9ul, 40ul, 61ul, 64ul}) {
      const auto tokens = random_tokens(n, m.config.vocab_size, 100 + n);
      const KVCacheState st = prefill(m, tokens);
      CHECK(st.tokens_seen == n);
      check_retained_matches_layout(st);
      check_bytes_match_closed_form(st);
    }
  }
}

TEST_CASE("prefill last logits equal the batch forward bitwise") {
  const HybridModel m =
      make_model({PatternSpec::attn_sink(1, 2, 8), PatternSpec::full(8)}, 8);
  const auto tokens = random_tokens(37, m.config.vocab_size, 5);
  std::vector<double> last;
  (void)prefill(m, tokens, 2, &last);
  const Matrix logits = model_forward(m, tokens);
  REQUIRE(last.size() == logits.cols);
  CHECK(std::memcmp(last.data(), logits.row(36),
                    last.size() * sizeof(double)) == 0);
}

TEST_CASE("decode matches a fresh batch forward for every pattern kind") {
  const std::vector<std::vector<PatternSpec>> maps = {
      {PatternSpec::full(8), PatternSpec::full(8)},
      {PatternSpec::attn_sink(1, 2, 8), PatternSpec::attn_sink(1, 2, 8)},
      {PatternSpec::block_stride(2, 8), PatternSpec::block_stride(2, 8)},
      // hybrid: one of each kind
      {PatternSpec::full(8), PatternSpec::attn_sink(1, 2, 8),
       PatternSpec::block_stride(2, 8)},
  };
  for (const auto& specs : maps) {
    const HybridModel m = make_model(specs, 8);
    // Start mid-block so decode crosses several block boundaries.
    std::vector<std::int32_t> tokens =
        random_tokens(21, m.config.vocab_size, 42);
    KVCacheState st = prefill(m, tokens);

    std::mt19937_64 rng(7);
    for (std::size_t step = 0; step < 25; ++step) {
      const auto tok =
          static_cast<std::int32_t>(rng() % m.config.vocab_size);
      const std::vector<double> dec = decode_step(st, tok);
      tokens.push_back(tok);

      const Matrix ref = model_forward(m, tokens);
      REQUIRE(dec.size() == ref.cols);
      double dev = 0.0;
      for (std::size_t j = 0; j < dec.size(); ++j)
        dev = std::max(dev, std::abs(dec[j] - ref(tokens.size() - 1, j)));
      CAPTURE(step);
      CHECK(dev <= 1e-9);

      check_retained_matches_layout(st);
      check_bytes_match_closed_form(st);
    }
  }
}

TEST_CASE("sink ring reuses storage instead of reallocating") {
  const HybridModel m = make_model({PatternSpec::attn_sink(1, 2, 8)}, 8);
  auto tokens = random_tokens(40, m.config.vocab_size, 9);  // 5 blocks: saturated
  KVCacheState st = prefill(m, tokens);
  REQUIRE(st.layers[0].ring.size() == 2);
  const double* slot0 = st.layers[0].ring[0].k.data.data();
  const double* slot1 = st.layers[0].ring[1].k.data.data();
  const std::size_t before = retained_block_indices(st, 0).size();

  std::mt19937_64 rng(3);
  for (std::size_t step = 0; step < 2 * 8 + 3; ++step) {  // cross 2+ boundaries
    (void)decode_step(st, static_cast<std::int32_t>(rng() % 29));
    // Saturated ring: retained count never grows again.
    CHECK(retained_block_indices(st, 0).size() == before);
  }
  CHECK(st.layers[0].ring[0].k.data.data() == slot0);
  CHECK(st.layers[0].ring[1].k.data.data() == slot1);
}

TEST_CASE("byte accounting on a worked example") {
  // 4 layers over 64 tokens, block 16, hidden 8, 2 bytes per element.
  // full: 4 blocks = 64 tokens; sink 1+window 2: 3 blocks = 48;
  // stride 2 at row 3: {0,2,3} = 48; full again: 64.
  // (64+48+48+64) tokens * 2 (K and V) * 8 hidden * 2 bytes = 7168.
  const HybridModel m =
      make_model({PatternSpec::full(16), PatternSpec::attn_sink(1, 2, 16),
                  PatternSpec::block_stride(2, 16), PatternSpec::full(16)},
                 16, /*heads=*/1, /*head_dim=*/8);
  const auto tokens = random_tokens(64, m.config.vocab_size, 1);
  const KVCacheState st = prefill(m, tokens);
  CHECK(cache_bytes(st) == 7168);
  CHECK(cache_bytes_closed_form(m.config, m.map, 64) == 7168);
  // Ragged tail: 61 tokens caps the full layers at 61 each and leaves the
  // sparse layers at whole retained blocks: 61+48+48+61 = 218 tokens.
  CHECK(cache_bytes_closed_form(m.config, m.map, 61) == 218 * 2 * 8 * 2);
}

TEST_CASE("cache summary mentions every layer and the total") {
  const HybridModel m =
      make_model({PatternSpec::full(8), PatternSpec::attn_sink(1, 1, 8)}, 8);
  const auto tokens = random_tokens(17, m.config.vocab_size, 2);
  const KVCacheState st = prefill(m, tokens);
  const std::string s = cache_summary(st);
  CHECK(s.find("tokens_seen=17") != std::string::npos);
  CHECK(s.find("layer 0") != std::string::npos);
  CHECK(s.find("layer 1") != std::string::npos);
  CHECK(s.find("full") != std::string::npos);
  CHECK(s.find("sink") != std::string::npos);
}

TEST_CASE("error contract") {
  const HybridModel m = make_model({PatternSpec::full(8)}, 8);
  CHECK_THROWS_AS(prefill(m, std::vector<std::int32_t>{}),
                  std::invalid_argument);
  const auto tokens = random_tokens(4, m.config.vocab_size, 8);
  CHECK_THROWS_AS(prefill(m, tokens, 0), std::invalid_argument);

  KVCacheState st = prefill(m, tokens);
  CHECK_THROWS_AS(decode_step(st, 999), std::invalid_argument);
  CHECK_THROWS_AS(decode_step(st, -1), std::invalid_argument);
  CHECK_THROWS_AS(retained_block_indices(st, 5), std::invalid_argument);

  KVCacheState empty;
  CHECK_THROWS_AS(decode_step(empty, 0), std::invalid_argument);
}
