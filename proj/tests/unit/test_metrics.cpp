#include <doctest.h>

#include <sstream>

#include "../common/oracles.hpp"
#include "batman/metrics.hpp"
#include "batman/rng.hpp"

using namespace batman;

namespace {

LabelMap box(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t y1, std::size_t x1,
             std::uint8_t id = 1) {
  LabelMap m(h, w);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) m.at(y, x) = id;
  return m;
}

LabelMap random_blobs(std::uint64_t seed, std::size_t h, std::size_t w) {
  Rng rng(seed);
  LabelMap m(h, w);
  for (int k = 0; k < 3; ++k) {
    const long cy = static_cast<long>(rng.uniform_int(0, static_cast<std::int64_t>(h) - 1));
    const long cx = static_cast<long>(rng.uniform_int(0, static_cast<std::int64_t>(w) - 1));
    const long r = static_cast<long>(rng.uniform_int(2, 6));
    for (long y = 0; y < static_cast<long>(h); ++y)
      for (long x = 0; x < static_cast<long>(w); ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m.at(y, x) = 1;
  }
  return m;
}

}  // namespace

TEST_SUITE("eval-metrics") {

TEST_CASE("region similarity cases") {
  const LabelMap left = box(4, 4, 0, 0, 4, 2), top = box(4, 4, 0, 0, 2, 4);
  CHECK(region_j(left, top, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(region_j(left, left, 1) == 1.0);
  CHECK(region_j(left, box(4, 4, 0, 2, 4, 4), 1) == 0.0);
  CHECK(region_j(LabelMap(4, 4), LabelMap(4, 4), 1) == 1.0);
  CHECK(region_j(LabelMap(4, 4), left, 1) == 0.0);
  CHECK_THROWS(region_j(LabelMap(4, 4), LabelMap(4, 5), 1));
}

TEST_CASE("region similarity is symmetric and only counts the requested id") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const LabelMap a = random_blobs(s, 24, 24), b = random_blobs(s + 100, 24, 24);
    CHECK(region_j(a, b, 1) == region_j(b, a, 1));
    CHECK(region_j(a, b, 2) == 1.0);
  }
}

TEST_CASE("growing a prediction inside the ground truth never lowers J") {
  const LabelMap gt = box(20, 20, 5, 5, 15, 15);
  double last = -1.0;
  for (std::size_t r = 0; r <= 5; ++r) {
    const LabelMap pred = box(20, 20, 10 - r, 10 - r, 10 + r, 10 + r);
    const double j = region_j(pred, gt, 1);
    CHECK(j >= last);
    last = j;
  }
  CHECK(last == 1.0);
}

TEST_CASE("boundary pixels match the brute-force definition") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const LabelMap m = random_blobs(s, 20, 25);
    const auto b = boundary_map(m, 1);
    std::vector<std::uint8_t> expect(b.size(), 0);
    for (const auto& [y, x] : oracle::boundary_pixels(m, 1)) expect[y * 25 + x] = 1;
    CHECK(b == expect);
  }
  // A full-frame object has no boundary: the image border does not count.
  const LabelMap full(6, 6, 1);
  for (auto v : boundary_map(full, 1)) CHECK(v == 0);
}

TEST_CASE("boundary F cases") {
  const LabelMap square = box(20, 20, 5, 5, 15, 15);
  const LabelMap grown = box(20, 20, 4, 4, 16, 16);
  CHECK(boundary_f(square, square, 1, 0) == 1.0);
  CHECK(boundary_f(square, grown, 1, 1) == 1.0);
  CHECK(boundary_f(square, grown, 1, 0) == 0.0);
  CHECK(boundary_f(square, grown, 1, 1) == doctest::Approx(oracle::boundary_f(square, grown, 1, 1)));
  CHECK(boundary_f(LabelMap(20, 20), square, 1, 2) == 0.0);
  CHECK(boundary_f(LabelMap(20, 20), LabelMap(20, 20), 1, 2) == 1.0);
  CHECK_THROWS(boundary_f(square, square, 1, -1));
}

TEST_CASE("boundary F agrees with the exhaustive matcher") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const LabelMap a = random_blobs(s, 24, 24), b = random_blobs(s + 500, 24, 24);
    for (int tol : {0, 1, 3}) {
      CAPTURE(s);
      CAPTURE(tol);
      CHECK(boundary_f(a, b, 1, tol) == doctest::Approx(oracle::boundary_f(a, b, 1, tol)).epsilon(1e-12));
    }
  }
}

TEST_CASE("boundary F is non-decreasing in the tolerance") {
  const LabelMap a = random_blobs(3, 30, 30), b = random_blobs(4, 30, 30);
  double last = -1.0;
  for (int tol = 0; tol < 8; ++tol) {
    const double f = boundary_f(a, b, 1, tol);
    CHECK(f >= last);
    last = f;
  }
}

TEST_CASE("default boundary tolerance") {
  CHECK(default_boundary_tolerance(64, 64) == 1);
  CHECK(default_boundary_tolerance(480, 854) == 8);
  CHECK(default_boundary_tolerance(4, 4) == 1);
}

TEST_CASE("jf report averages objects within a frame first") {
  const std::vector<FrameScore> scores = {
      {"a", 1, 1, 1.0, 1.0}, {"a", 1, 2, 0.0, 0.5}, {"b", 1, 1, 1.0, 0.0}};
  const JFSummary s = jf_report(scores);
  CHECK(s.j == doctest::Approx(0.75));
  CHECK(s.f == doctest::Approx(0.5 * (0.75 + 0.0)));
  CHECK(s.jf == doctest::Approx(0.5 * (s.j + s.f)));
  CHECK(s.frames == 2);
  CHECK(s.entries == 3);
  CHECK_THROWS(jf_report({}));
}

TEST_CASE("jf report with one object per frame is the flat mean") {
  Rng rng(8);
  std::vector<FrameScore> scores;
  double sj = 0.0, sf = 0.0;
  for (std::size_t t = 1; t <= 12; ++t) {
    const double j = rng.uniform(), f = rng.uniform();
    scores.push_back({"seq", t, 1, j, f});
    sj += j;
    sf += f;
  }
  const JFSummary s = jf_report(scores);
  CHECK(s.j == doctest::Approx(sj / 12));
  CHECK(s.f == doctest::Approx(sf / 12));
}

TEST_CASE("sequence scoring skips the reference frame") {
  const LabelMap m = box(16, 16, 2, 2, 8, 8);
  LabelMap two = m;
  two.at(12, 12) = 2;
  const std::vector<LabelMap> gt = {two, two, two};
  const auto scores = score_sequence("s", {two, two, m}, gt);
  REQUIRE(scores.size() == 4);
  CHECK(scores[0].frame == 1);
  CHECK(scores[0].j == 1.0);
  CHECK(scores[3].object == 2);
  CHECK(scores[3].j == 0.0);
  CHECK(scores[2].j == 1.0);
}

TEST_CASE("scores csv") {
  std::ostringstream out;
  write_scores_csv(out, {{"s", 1, 1, 0.5, 0.25}});
  CHECK(out.str() == "sequence,frame,object,J,F\ns,1,1,0.500000,0.250000\n");
}

}  // TEST_SUITE
