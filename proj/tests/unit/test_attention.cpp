#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "../common/oracles.hpp"
#include "batman/attention.hpp"
#include "batman/io.hpp"
#include "batman/kernels.hpp"
#include "batman/rng.hpp"

using namespace batman;

namespace {

AttentionConfig small_cfg(std::size_t wd, std::size_t wb) {
  AttentionConfig c;
  c.window_radius = wd;
  c.rank_window = wb;
  c.num_heads = 1;
  c.head_dim = 4;
  c.channels = 4;
  return c;
}

BilateralEncoding random_e(std::size_t h, std::size_t w, Rng& rng) { return {randn({h * w, 1}, rng), h, w}; }

// E with repeated values exercises the tie rule.
BilateralEncoding tied_e(std::size_t h, std::size_t w, Rng& rng) {
  std::vector<double> v(h * w);
  for (auto& x : v) x = static_cast<double>(rng.uniform_int(0, 2));
  return {Tensor({h * w, 1}, v), h, w};
}

}  // namespace

TEST_SUITE("bilateral-attention") {

TEST_CASE("config invariants") {
  CHECK_NOTHROW(AttentionConfig::full_scale().validate());
  CHECK_NOTHROW(AttentionConfig::toy().validate());
  CHECK(AttentionConfig::full_scale().max_rank_window() == 224);
  CHECK(AttentionConfig::toy().rank_window == 9);
  AttentionConfig bad = small_cfg(1, 9);
  CHECK_THROWS(bad.validate());
  bad = small_cfg(1, 2);
  bad.channels = 5;
  CHECK_THROWS(bad.validate());
  bad = small_cfg(1, 2);
  bad.suppression = 0.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("bilateral encoding") {
  Rng rng(1);
  const TokenGrid q{randn({12, 3}, rng), 3, 4}, f{randn({12, 2}, rng), 3, 4};
  const BilateralEncoding zero = encode_bilateral_space(q, f, Tensor::zeros({1, 5, 1, 1}));
  for (double v : zero.values.data()) CHECK(v == 0.0);
  const Tensor proj = randn({1, 5, 1, 1}, rng);
  const BilateralEncoding e = encode_bilateral_space(q, f, proj);
  CHECK(e.values.shape() == Shape{12, 1});
  for (std::size_t t = 0; t < 12; ++t) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += q.tokens.at(t, c) * proj[c];
    for (std::size_t c = 0; c < 2; ++c) s += f.tokens.at(t, c) * proj[3 + c];
    CHECK(std::abs(e.at(t) - s) < 1e-12);
  }
  const TokenGrid other{randn({10, 2}, rng), 2, 5};
  CHECK_THROWS(encode_bilateral_space(q, other, proj));
}

TEST_CASE("mask matches brute-force admission rule") {
  Rng rng(2);
  for (std::size_t h : {1, 3, 5})
    for (std::size_t w : {2, 4, 6})
      for (std::size_t wd : {0, 1, 2}) {
        const std::size_t area = (2 * wd + 1) * (2 * wd + 1);
        for (std::size_t wb = 0; wb < area; wb += 2) {
          for (int rep = 0; rep < 3; ++rep) {
            const BilateralEncoding e = rep == 2 ? tied_e(h, w, rng) : random_e(h, w, rng);
            const BilateralMask m = build_bilateral_mask(e, small_cfg(wd, wb));
            const auto dense = oracle::bilateral_mask_dense(e.values.to_vector(), h, w, wd, wb);
            const Tensor md = m.to_dense();
            bool same = true;
            for (std::size_t i = 0; i < h * w; ++i)
              for (std::size_t j = 0; j < h * w; ++j) same = same && (md.at(i, j) == dense[i][j]);
            CHECK(same);
          }
        }
      }
}

TEST_CASE("mask invariants") {
  Rng rng(3);
  const std::size_t h = 7, w = 6, wd = 2;
  const BilateralMask m = build_bilateral_mask(random_e(h, w, rng), small_cfg(wd, 5));
  for (std::size_t q = 0; q < h * w; ++q) {
    CHECK(m.admits(q, q));
    CHECK(m.count(q) >= 1);
    const auto keys = m.keys(q);
    CHECK(std::is_sorted(keys.begin(), keys.end()));
    for (auto p : keys) {
      CHECK(std::labs(static_cast<long>(p / w) - static_cast<long>(q / w)) <= static_cast<long>(wd));
      CHECK(std::labs(static_cast<long>(p % w) - static_cast<long>(q % w)) <= static_cast<long>(wd));
    }
  }
  CHECK(BilateralMask::from_dense(m.to_dense(), h, w) == m);
}

TEST_CASE("zero rank window admits only the query itself") {
  Rng rng(4);
  const BilateralMask m = build_bilateral_mask(random_e(5, 5, rng), small_cfg(2, 0));
  for (std::size_t q = 0; q < 25; ++q) {
    CHECK(m.count(q) == 1);
    CHECK(m.admits(q, q));
  }
}

TEST_CASE("maximal rank window is the geometric window for any E") {
  Rng rng(5);
  for (std::size_t wd : {0, 1, 2, 3}) {
    const AttentionConfig c = small_cfg(wd, (2 * wd + 1) * (2 * wd + 1) - 1);
    const BilateralMask geo = spatial_window_mask(6, 7, wd);
    for (int rep = 0; rep < 5; ++rep) CHECK(build_bilateral_mask(random_e(6, 7, rng), c) == geo);
    CHECK(build_bilateral_mask(tied_e(6, 7, rng), c) == geo);
  }
}

TEST_CASE("exact and windowed attention match the dense oracle") {
  Rng rng(6);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t h = 3 + rep % 4, w = 4 + rep % 3, n = h * w, c = 4, frames = 1 + rep % 3;
    const BilateralEncoding e = random_e(h, w, rng);
    const BilateralMask m = build_bilateral_mask(e, small_cfg(1 + rep % 2, rep % 5));
    const Tensor q = randn({n, c}, rng), kk = randn({frames * n, c}, rng), v = randn({frames * n, 3}, rng);
    const auto dense = oracle::bilateral_mask_dense(e.values.to_vector(), h, w, 1 + rep % 2, rep % 5);
    const Tensor ref = oracle::masked_attention(q, kk, v, dense);
    CHECK(max_abs_diff(bi_attn_exact(q, kk, v, m), ref) < 1e-10);
    CHECK(max_abs_diff(bi_attn_windowed(q, kk, v, m), ref) < 1e-10);
  }
}

TEST_CASE("additive form with large suppression equals exact form") {
  Rng rng(7);
  const std::size_t h = 5, w = 5, n = 25;
  const BilateralMask m = build_bilateral_mask(random_e(h, w, rng), small_cfg(1, 3));
  const Tensor q = randn({n, 4}, rng), kk = randn({n, 4}, rng), v = randn({n, 2}, rng);
  const Tensor zero = Tensor::zeros({n, 1});
  const Tensor p = bi_attn_additive_weights(q, kk, m, zero, 1e4);
  double leaked = 0.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < n; ++j)
      if (!m.admits(r, j)) leaked = std::max(leaked, p.at(r, j));
  CHECK(leaked < 1e-8);
  CHECK(max_abs_diff(bi_attn_additive(q, kk, v, m, zero, 1e4), bi_attn_exact(q, kk, v, m)) < 1e-8);
  // With an E bias, the windowed form gathers the same scores.
  const Tensor e = randn({n, 1}, rng);
  CHECK(max_abs_diff(bi_attn_additive(q, kk, v, m, e, 1e4), bi_attn_windowed(q, kk, v, m, &e)) < 1e-10);
}

TEST_CASE("exact weights are a masked row-stochastic matrix") {
  Rng rng(8);
  const BilateralMask m = build_bilateral_mask(random_e(4, 4, rng), small_cfg(1, 2));
  const Tensor p = bi_attn_exact_weights(randn({16, 4}, rng), randn({32, 4}, rng), m);
  CHECK(p.shape() == Shape{16, 32});
  for (std::size_t r = 0; r < 16; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 32; ++j) {
      if (!m.admits(r, j % 16)) CHECK(p.at(r, j) == 0.0);
      s += p.at(r, j);
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("multi-head output is the concatenation of heads times W_O") {
  Rng rng(9);
  const std::size_t n = 16, c = 6, heads = 2, d = 3;
  const BilateralMask m = build_bilateral_mask(random_e(4, 4, rng), small_cfg(1, 4));
  const Tensor q = randn({n, c}, rng), kk = randn({n, c}, rng), v = randn({n, c}, rng);
  HeadProjections proj;
  for (std::size_t i = 0; i < heads; ++i) {
    proj.query.push_back(randn({c, d}, rng));
    proj.key.push_back(randn({c, d}, rng));
    proj.value.push_back(randn({c, d}, rng));
  }
  proj.output = randn({heads * d, c}, rng);
  std::vector<Tensor> outs;
  for (std::size_t i = 0; i < heads; ++i) {
    outs.push_back(bi_attn_exact(oracle::matmul(q, proj.query[i]), oracle::matmul(kk, proj.key[i]),
                                 oracle::matmul(v, proj.value[i]), m));
  }
  const Tensor ref = oracle::matmul(kernels::concat_cols(outs), proj.output);
  for (auto variant : {AttentionVariant::kExact, AttentionVariant::kWindowed}) {
    CHECK(max_abs_diff(multi_head_bi_attn(q, kk, v, m, proj, variant), ref) < 1e-10);
  }
  const Tensor zero = Tensor::zeros({n, 1});
  CHECK(max_abs_diff(multi_head_bi_attn(q, kk, v, m, proj, AttentionVariant::kAdditive, &zero, 1e4), ref) < 1e-8);
}

TEST_CASE("mask dump and overlay") {
  const BilateralMask m = spatial_window_mask(3, 3, 1);
  std::ostringstream out;
  m.dump(out);
  const std::string text = out.str();
  CHECK(text.rfind("0 0 : 0,0 0,1 1,0 1,1\n", 0) == 0);
  const auto path = std::filesystem::temp_directory_path() / "batman_overlay_test.pgm";
  m.write_overlay_pgm(path, 4, 1, 2);
  const io::GrayImage img = io::read_pgm(path);
  CHECK(img.width == 6);
  CHECK(img.pixels[2 * 6 + 2] == 255);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
