#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "batman/rng.hpp"
#include "batman/synthetic.hpp"

using namespace batman;

namespace {

SyntheticScene one_disc(int vy, int vx) {
  SyntheticScene s;
  s.seed = 5;
  s.height = 48;
  s.width = 48;
  s.frames = 5;
  s.background_texture = 1200;
  SceneObject o;
  o.shape = ObjectShape::kDisc;
  o.label = 1;
  o.texture = 7;
  o.y = 20;
  o.x = 12;
  o.vy = vy;
  o.vx = vx;
  o.radius = 6;
  s.objects.push_back(o);
  return s;
}

std::pair<double, double> centroid(const LabelMap& m, int id) {
  double sy = 0.0, sx = 0.0, n = 0.0;
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x)
      if (m.at(y, x) == id) {
        sy += static_cast<double>(y);
        sx += static_cast<double>(x);
        n += 1.0;
      }
  return {sy / n, sx / n};
}

// True when every 8-neighbour of (y, x) carries the same label.
bool interior(const LabelMap& m, long y, long x) {
  for (long dy = -1; dy <= 1; ++dy)
    for (long dx = -1; dx <= 1; ++dx) {
      const long ny = y + dy, nx = x + dx;
      if (ny < 0 || nx < 0 || ny >= static_cast<long>(m.height) || nx >= static_cast<long>(m.width)) return false;
      if (m.at(ny, nx) != m.at(y, x)) return false;
    }
  return true;
}

// Moves every pixel of frame t along the ground-truth flow and compares it with
// frame t + 1, away from occlusion boundaries. Returns the largest error.
double warp_residual(const SyntheticSequence& seq) {
  double worst = 0.0;
  const auto h = static_cast<long>(seq.scene.height), w = static_cast<long>(seq.scene.width);
  for (std::size_t t = 0; t + 1 < seq.length(); ++t) {
    const FlowField& f = seq.flows[t];
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        const long ty = y + std::lround(f.v(y, x)), tx = x + std::lround(f.u(y, x));
        if (ty < 0 || tx < 0 || ty >= h || tx >= w) continue;
        if (!interior(seq.masks[t], y, x) || !interior(seq.masks[t + 1], ty, tx)) continue;
        if (seq.masks[t].at(y, x) != seq.masks[t + 1].at(ty, tx)) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          const double a = seq.frames[t].at(c, y, x), b = seq.frames[t + 1].at(c, ty, tx);
          worst = std::max(worst, std::abs(a - b));
        }
      }
  }
  return worst;
}

}  // namespace

TEST_SUITE("synthetic-vos") {

TEST_CASE("zero velocity gives identical frames and zero flow") {
  const SyntheticSequence seq = generate_sequence(one_disc(0, 0));
  for (std::size_t t = 1; t < seq.length(); ++t) {
    CHECK(identical(seq.frames[t], seq.frames[0]));
    CHECK(seq.masks[t] == seq.masks[0]);
  }
  for (const auto& f : seq.flows)
    for (double v : f.uv().data()) CHECK(v == 0.0);
}

TEST_CASE("a disc moving at (2, 0) advances its centroid by 2 px per frame") {
  const SyntheticSequence seq = generate_sequence(one_disc(2, 0));
  for (std::size_t t = 1; t < seq.length(); ++t) {
    const auto [y0, x0] = centroid(seq.masks[t - 1], 1);
    const auto [y1, x1] = centroid(seq.masks[t], 1);
    CHECK(std::abs((y1 - y0) - 2.0) <= 0.5);
    CHECK(std::abs(x1 - x0) <= 0.5);
  }
}

TEST_CASE("ground-truth flow carries frames forward on object interiors") {
  CHECK(warp_residual(generate_sequence(one_disc(1, 2))) < 1e-6);
  // Distractors share label 0 with the background, so the label test cannot
  // separate them from what they uncover.
  for (auto c : {SceneCategory::kSingle, SceneCategory::kTwin, SceneCategory::kSalientMotion,
                 SceneCategory::kNoisyFlow}) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      CAPTURE(category_name(c));
      CAPTURE(seed);
      CHECK(warp_residual(generate_sequence(random_scene(seed, c))) < 1e-6);
    }
  }
}

TEST_CASE("flow is the owning object's motion and zero on background") {
  const SyntheticSequence seq = generate_sequence(one_disc(1, -1));
  for (std::size_t y = 0; y < 48; ++y)
    for (std::size_t x = 0; x < 48; ++x) {
      const bool obj = seq.masks[0].at(y, x) == 1;
      CHECK(seq.flows[0].u(y, x) == (obj ? -1.0 : 0.0));
      CHECK(seq.flows[0].v(y, x) == (obj ? 1.0 : 0.0));
    }
}

TEST_CASE("objects stay inside the canvas and labels match the object list") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SyntheticScene s = random_scene(seed, SceneCategory::kTwin);
    const SyntheticSequence seq = generate_sequence(s);
    for (const auto& m : seq.masks) {
      CHECK(m.max_label() == 2);
      for (int id : {1, 2}) {
        bool present = false;
        for (auto l : m.labels) present = present || l == id;
        CHECK(present);
      }
    }
  }
}

TEST_CASE("rendering is deterministic") {
  const SyntheticScene s = random_scene(42, SceneCategory::kDistractor);
  const SyntheticSequence a = generate_sequence(s), b = generate_sequence(s);
  for (std::size_t t = 0; t < a.length(); ++t) {
    CHECK(identical(a.frames[t], b.frames[t]));
    CHECK(a.masks[t] == b.masks[t]);
  }
}

TEST_CASE("duplicate labels are rejected") {
  SyntheticScene s = one_disc(0, 0);
  s.objects.push_back(s.objects[0]);
  s.objects[1].x = 36;
  CHECK_THROWS(generate_sequence(s));
}

TEST_CASE("ablation suite is stable and structured") {
  const auto a = make_ablation_suite(3), b = make_ablation_suite(3);
  CHECK(a.size() == 16);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].seed == b[i].seed);
    CHECK(scene_manifest_line("s", a[i]) == scene_manifest_line("s", b[i]));
  }
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a[i].category == SceneCategory::kTwin);
    CHECK(a[i].objects.size() >= 2);
    CHECK(a[i].objects[0].texture == a[i].objects[1].texture);
    CHECK(a[4 + i].category == SceneCategory::kSalientMotion);
    CHECK(a[4 + i].objects[0].texture == a[4 + i].background_texture);
    CHECK(a[8 + i].category == SceneCategory::kDistractor);
    bool has_distractor = false;
    for (const auto& o : a[8 + i].objects) has_distractor = has_distractor || o.label == 0;
    CHECK(has_distractor);
    CHECK(a[12 + i].category == SceneCategory::kNoisyFlow);
    CHECK(a[12 + i].flow_noise == 1.5);
  }
}

TEST_CASE("noisy-flow suite noise matches its sigma") {
  const auto suite = make_ablation_suite(9);
  const SyntheticSequence seq = generate_sequence(suite[12]);
  Rng rng(1);
  const auto noisy = noisy_flows(seq, suite[12].flow_noise, rng);
  double s2 = 0.0, s = 0.0, n = 0.0;
  for (std::size_t t = 0; t < noisy.size() && n < 1e4; ++t)
    for (std::size_t i = 0; i < noisy[t].uv().numel() && n < 1e4; ++i) {
      const double d = noisy[t].uv()[i] - seq.flows[t].uv()[i];
      s += d;
      s2 += d * d;
      n += 1.0;
    }
  const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
  CHECK(std::abs(sd - 1.5) <= 0.05 * 1.5);
}

TEST_CASE("dataset directory round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "batman_dataset_test";
  std::filesystem::remove_all(dir);
  const auto suite = make_ablation_suite(4, 1);
  write_dataset(dir, suite);
  CHECK(std::filesystem::exists(dir / "manifest.txt"));
  const SyntheticSequence back = read_sequence_dir(dir / "scene_0000");
  const SyntheticSequence orig = generate_sequence(suite[0]);
  CHECK(back.length() == orig.length());
  for (std::size_t t = 0; t < orig.length(); ++t) {
    CHECK(back.masks[t] == orig.masks[t]);
    CHECK(max_abs_diff(back.frames[t], orig.frames[t]) < 1.0 / 255.0 + 1e-12);
  }
  CHECK(max_abs_diff(back.flows[0].uv(), orig.flows[0].uv()) < 1e-6);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
