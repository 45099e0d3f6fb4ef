#include <doctest.h>

#include <sstream>

#include "../common/oracles.hpp"
#include "batman/io.hpp"
#include "batman/kernels.hpp"
#include "batman/rng.hpp"

using namespace batman;
namespace k = batman::kernels;

TEST_SUITE("tensor-kernels") {

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  const Tensor t = Tensor::from_list({2, 2}, {1, 2, 3, 4});
  CHECK(t.numel() == 4);
  CHECK(t.at(1, 0) == 3);
  const Tensor r = t.reshape({4});
  CHECK(r[3] == 4);
  CHECK_THROWS(t.reshape({3}));
}

TEST_CASE("matmul identity and permutation") {
  Rng rng(1);
  const Tensor a = randn({4, 4}, rng);
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  CHECK(identical(k::matmul(a, Tensor({4, 4}, eye)), a));
  const Tensor p = k::matmul(Tensor::from_list({2, 2}, {1, 2, 3, 4}), Tensor::from_list({2, 2}, {0, 1, 1, 0}));
  CHECK(identical(p, Tensor::from_list({2, 2}, {2, 1, 4, 3})));
}

TEST_CASE("matmul matches triple loop on random shapes") {
  Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t m = 1 + rng.uniform_int(0, 9), kk = 1 + rng.uniform_int(0, 9), n = 1 + rng.uniform_int(0, 9);
    const Tensor a = randn({m, kk}, rng), b = randn({kk, n}, rng);
    CHECK(max_abs_diff(k::matmul(a, b), oracle::matmul(a, b)) < 1e-12);
  }
  const Tensor a = randn({5, 7}, rng), b = randn({7, 3}, rng);
  CHECK(max_abs_diff(k::matmul(a, b), oracle::matmul(a, b)) < 1e-12);
  CHECK(max_abs_diff(k::matmul_nt(a, k::transpose(b)), oracle::matmul(a, b)) < 1e-12);
}

TEST_CASE("matmul rejects mismatched shapes and names both") {
  try {
    k::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("4x5") != std::string::npos);
  }
}

TEST_CASE("softmax rows") {
  const Tensor u = k::softmax_rows(Tensor::zeros({1, 3}));
  for (int i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Tensor big = k::softmax_rows(Tensor::from_list({1, 2}, {1000, 0}));
  CHECK(big.all_finite());
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);

  Rng rng(3);
  const Tensor x = randn({4, 6}, rng, 3.0);
  const Tensor y = k::softmax_rows(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < 6; ++c) z += std::exp(x.at(r, c));
    for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(y.at(r, c) - std::exp(x.at(r, c)) / z) < 1e-12);
  }
}

TEST_CASE("softmax rows sum to one for magnitudes up to 1e3") {
  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const double mag = std::pow(10.0, rng.uniform(-2.0, 3.0));
    const Tensor y = k::softmax_rows(randn({3, 1 + static_cast<std::size_t>(rep % 17)}, rng, mag));
    for (std::size_t r = 0; r < y.dim(0); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < y.dim(1); ++c) {
        CHECK(y.at(r, c) >= 0.0);
        s += y.at(r, c);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("layer norm") {
  const Tensor g = Tensor::full({4}, 1.0), b = Tensor::zeros({4});
  const Tensor c = k::layer_norm(Tensor::full({2, 4}, 3.5), g, b).y;
  for (double v : c.data()) CHECK(v == 0.0);
  Rng rng(5);
  const Tensor y = k::layer_norm(randn({8, 16}, rng, 4.0), Tensor::full({16}, 1.0), Tensor::zeros({16})).y;
  for (std::size_t r = 0; r < 8; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c2 = 0; c2 < 16; ++c2) mean += y.at(r, c2) / 16.0;
    for (std::size_t c2 = 0; c2 < 16; ++c2) var += (y.at(r, c2) - mean) * (y.at(r, c2) - mean) / 16.0;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("conv2d identity and averaging") {
  Rng rng(6);
  const Tensor x = randn({3, 5, 5}, rng);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 4] = 1.0;
  CHECK(max_abs_diff(k::conv2d(x, Tensor({3, 3, 1, 1}, eye), Tensor(), {1, 0}), x) == 0.0);
  const Tensor avg = k::conv2d(Tensor::full({1, 6, 6}, 2.0), Tensor::full({1, 1, 3, 3}, 1.0 / 9.0), Tensor(), {1, 1});
  for (std::size_t y = 1; y < 5; ++y)
    for (std::size_t xx = 1; xx < 5; ++xx) CHECK(avg.at(0, y, xx) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("conv2d matches direct loops") {
  Rng rng(7);
  for (std::size_t stride : {1, 2})
    for (std::size_t pad : {0, 1, 2})
      for (std::size_t kk : {1, 3, 5}) {
        const Tensor x = randn({3, 9, 8}, rng), w = randn({4, 3, kk, kk}, rng), b = randn({4}, rng);
        if (9 + 2 * pad < kk) continue;
        CHECK(max_abs_diff(k::conv2d(x, w, b, {stride, pad}), oracle::conv2d(x, w, b, stride, pad)) < 1e-12);
      }
}

TEST_CASE("conv2d rejects non-positive output extent") {
  CHECK_THROWS(k::conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), Tensor(), {1, 0}));
}

TEST_CASE("bilinear resize") {
  Rng rng(8);
  const Tensor x = randn({2, 4, 5}, rng);
  CHECK(max_abs_diff(k::bilinear_resize(x, 4, 5), x) == 0.0);
  const Tensor c = k::bilinear_resize(Tensor::full({1, 3, 3}, 0.7), 7, 2);
  for (double v : c.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
  // Half-pixel centres, clamped at the border: output rows/cols sample input
  // coordinates -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped to 1).
  const Tensor up = k::bilinear_resize(Tensor::from_list({1, 2, 2}, {1, 2, 3, 4}), 4, 4);
  const Tensor golden = Tensor::from_list(
      {1, 4, 4}, {1.0, 1.25, 1.75, 2.0, 1.5, 1.75, 2.25, 2.5, 2.5, 2.75, 3.25, 3.5, 3.0, 3.25, 3.75, 4.0});
  CHECK(max_abs_diff(up, golden) < 1e-15);
}

TEST_CASE("nearest upsample and its adjoint") {
  const Tensor x = Tensor::from_list({1, 2, 2}, {1, 2, 3, 4});
  const Tensor u = k::upsample_nearest(x, 2);
  CHECK(u.at(0, 1, 1) == 1);
  CHECK(u.at(0, 3, 2) == 4);
  Rng rng(9);
  const Tensor dy = randn({1, 4, 4}, rng);
  const Tensor dx = k::upsample_nearest_backward(dy, 2);
  CHECK(dx.at(0, 0, 0) == doctest::Approx(dy[0] + dy[1] + dy[4] + dy[5]));
}

TEST_CASE("btsr round trip and header layout") {
  Rng rng(10);
  const Tensor t = randn({2, 3, 4}, rng);
  std::stringstream ss;
  io::write_btsr(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "BTSR");
  CHECK(static_cast<int>(bytes[4]) == io::kBtsrVersion);
  CHECK(static_cast<int>(bytes[5]) == 2);
  CHECK(static_cast<int>(bytes[6]) == 3);
  CHECK(static_cast<unsigned char>(bytes[7]) == 2);
  CHECK(bytes.size() == 7 + 3 * 4 + 24 * 8);
  ss.seekg(0);
  CHECK(identical(io::read_btsr(ss), t));

  std::stringstream f32;
  io::write_btsr(f32, t, io::DType::kFloat32);
  f32.seekg(0);
  CHECK(max_abs_diff(io::read_btsr(f32), t) < 1e-6);

  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(io::read_btsr(bad), io::FormatError);
}

TEST_CASE("kernel results do not depend on buffer addresses") {
  Rng rng(77);
  const Tensor a = randn({7, 13}, rng), b = randn({13, 5}, rng), v = randn({13, 1}, rng);
  const Tensor s = randn({5, 37}, rng, 4.0);
  const Tensor ref_mm = k::matmul(a, b), ref_mv = k::matmul(a, v), ref_sm = k::softmax_rows(s), ref_g = k::gelu(s);
  std::vector<std::vector<double>> pads;
  for (std::size_t shift = 1; shift < 16; ++shift) {
    // Copies land at different offsets modulo the vector width.
    pads.emplace_back(shift);
    const Tensor a2(a.shape(), a.to_vector()), b2(b.shape(), b.to_vector());
    const Tensor v2(v.shape(), v.to_vector()), s2(s.shape(), s.to_vector());
    CHECK(identical(k::matmul(a2, b2), ref_mm));
    CHECK(identical(k::matmul(a2, v2), ref_mv));
    CHECK(identical(k::softmax_rows(s2), ref_sm));
    CHECK(identical(k::gelu(s2), ref_g));
  }
}

}  // TEST_SUITE
