#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "batman/losses.hpp"
#include "batman/optim.hpp"
#include "batman/rng.hpp"

using namespace batman;

namespace {

std::vector<double> pixel_ce(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.dim(0), s = logits.dim(1);
  std::vector<double> ce(n);
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0.0;
    for (std::size_t c = 0; c < s; ++c) z += std::exp(logits.at(i, c));
    ce[i] = std::log(z) - logits.at(i, static_cast<std::size_t>(labels[i]));
  }
  return ce;
}

std::vector<int> random_labels(std::size_t n, int slots, Rng& rng) {
  std::vector<int> l(n);
  for (auto& v : l) v = static_cast<int>(rng.uniform_int(0, slots - 1));
  return l;
}

}  // namespace

TEST_SUITE("losses-optim") {

TEST_CASE("bootstrapped ce with full fraction is the mean ce") {
  Rng rng(1);
  const Tensor logits = randn({50, 4}, rng);
  const auto labels = random_labels(50, 4, rng);
  const auto ce = pixel_ce(logits, labels);
  double mean = 0.0;
  for (double v : ce) mean += v;
  mean /= 50.0;
  CHECK(bootstrapped_ce(logits, labels, 1.0) == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("bootstrapped ce matches a sort-based oracle") {
  Rng rng(2);
  for (double frac : {0.1, 0.15, 0.5, 0.73}) {
    const Tensor logits = randn({40, 3}, rng, 2.0);
    const auto labels = random_labels(40, 3, rng);
    auto ce = pixel_ce(logits, labels);
    std::sort(ce.begin(), ce.end(), std::greater<>());
    const auto k = static_cast<std::size_t>(std::ceil(frac * 40 - 1e-9));
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += ce[i];
    CAPTURE(frac);
    CHECK(bootstrapped_ce(logits, labels, frac) == doctest::Approx(s / static_cast<double>(k)).epsilon(1e-12));
  }
}

TEST_CASE("bootstrapped ce edge cases") {
  // Confident and correct: loss approaches zero.
  const Tensor sure = Tensor::from_list({2, 2}, {50, -50, -50, 50});
  CHECK(bootstrapped_ce(sure, {0, 1}, 0.5) < 1e-30);
  // Uniform logits: log S everywhere.
  CHECK(bootstrapped_ce(Tensor::zeros({3, 4}), {0, 1, 3}, 0.4) == doctest::Approx(std::log(4.0)));
  CHECK_THROWS(bootstrapped_ce(sure, {0, 1}, 0.0));
  CHECK_THROWS(bootstrapped_ce(sure, {0, 1}, 1.5));
  CHECK_THROWS(bootstrapped_ce(sure, {0, 2}, 0.5));
  CHECK_THROWS(bootstrapped_ce(sure, {0}, 0.5));
}

TEST_CASE("bootstrapped ce never falls when the fraction shrinks") {
  Rng rng(3);
  const Tensor logits = randn({64, 3}, rng);
  const auto labels = random_labels(64, 3, rng);
  double last = 0.0;
  for (double frac : {1.0, 0.5, 0.25, 0.1, 0.02}) {
    const double l = bootstrapped_ce(logits, labels, frac);
    CHECK(l >= last);
    last = l;
  }
}

TEST_CASE("soft jaccard cases") {
  // One-hot predictions equal to the labels: zero loss.
  const Tensor exact = Tensor::from_list({3, 2}, {1, 0, 0, 1, 0, 1});
  CHECK(soft_jaccard(exact, {0, 1, 1}) == doctest::Approx(0.0));
  // Entirely wrong: loss 1.
  const Tensor wrong = Tensor::from_list({2, 2}, {0, 1, 1, 0});
  CHECK(soft_jaccard(wrong, {0, 1}) == doctest::Approx(1.0));
  // Background only: no object slot is present.
  CHECK(soft_jaccard(wrong, {0, 0}) == 0.0);
  // Half probability on one object pixel: inter 0.5, union 1.
  const Tensor half = Tensor::from_list({1, 2}, {0.5, 0.5});
  CHECK(soft_jaccard(half, {1}) == doctest::Approx(0.5));
}

TEST_CASE("soft jaccard matches a direct oracle averaged over present slots") {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor probs = rand_uniform({30, 4}, rng, 0.0, 1.0);
    std::vector<int> labels = random_labels(30, 3, rng);  // slot 3 absent
    double total = 0.0;
    int present = 0;
    for (int c = 1; c < 4; ++c) {
      if (std::find(labels.begin(), labels.end(), c) == labels.end()) continue;
      double inter = 0.0, uni = 0.0;
      for (std::size_t i = 0; i < 30; ++i) {
        const double p = probs.at(i, static_cast<std::size_t>(c));
        const double g = labels[i] == c ? 1.0 : 0.0;
        inter += std::min(p, g);
        uni += std::max(p, g);
      }
      total += 1.0 - inter / uni;
      ++present;
    }
    CHECK(soft_jaccard(probs, labels) == doctest::Approx(total / present).epsilon(1e-12));
  }
}

TEST_CASE("adamw first step matches a hand computation") {
  Params p;
  p.add("w", Tensor::from_list({3}, {1.0, -2.0, 0.5}));
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  AdamW opt(cfg, p);
  const Tensor g = Tensor::from_list({3}, {0.2, -4.0, 0.0});
  opt.step(p, {g});
  // After one step m_hat = g and v_hat = g^2, so the update is lr * sign(g).
  const double decay = 1.0 - 0.1 * 0.5;
  CHECK(p.get("w")[0] == doctest::Approx(1.0 * decay - 0.1 * 0.2 / (0.2 + 1e-8)));
  CHECK(p.get("w")[1] == doctest::Approx(-2.0 * decay + 0.1 * 4.0 / (4.0 + 1e-8)));
  CHECK(p.get("w")[2] == doctest::Approx(0.5 * decay));
  CHECK(opt.steps() == 1);
}

TEST_CASE("adamw second step uses bias-corrected moments") {
  Params p;
  p.add("w", Tensor::from_list({1}, {0.0}));
  AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg, p);
  opt.step(p, {Tensor::from_list({1}, {1.0})});
  opt.step(p, {Tensor::from_list({1}, {3.0})});
  const double m = (0.9 * 0.1 * 1.0 + 0.1 * 3.0) / (1.0 - 0.81);
  const double v = (0.999 * 0.001 * 1.0 + 0.001 * 9.0) / (1.0 - 0.999 * 0.999);
  CHECK(p.get("w")[0] == doctest::Approx(-0.01 - 0.01 * m / (std::sqrt(v) + 1e-8)));
}

TEST_CASE("adamw with zero learning rate leaves weights unchanged") {
  Rng rng(5);
  Params p;
  p.add("a", randn({4, 3}, rng));
  p.add("b", randn({2}, rng));
  const Params before = p;
  AdamWConfig cfg;
  cfg.lr = 0.0;
  AdamW opt(cfg, p);
  opt.step(p, {randn({4, 3}, rng), randn({2}, rng)});
  CHECK(p == before);
  CHECK_THROWS(opt.step(p, {randn({4, 3}, rng)}));
  CHECK_THROWS(opt.step(p, {randn({3, 4}, rng), randn({2}, rng)}));
}

TEST_CASE("ema warmup and decay") {
  Params init;
  init.add("w", Tensor::from_list({1}, {0.0}));
  Ema ema(0.99, init);
  CHECK(ema.current_decay() == doctest::Approx(0.1));
  Params cur;
  cur.add("w", Tensor::from_list({1}, {10.0}));
  ema.update(cur);
  CHECK(ema.shadow().get("w")[0] == doctest::Approx(9.0));
  CHECK(ema.current_decay() == doctest::Approx(2.0 / 11.0));
  for (int i = 0; i < 10000; ++i) ema.update(cur);
  CHECK(ema.current_decay() == 0.99);
  CHECK(ema.shadow().get("w")[0] == doctest::Approx(10.0));
}

TEST_CASE("ema with zero decay tracks the current weights") {
  Rng rng(6);
  Params init;
  init.add("w", randn({5}, rng));
  Ema ema(0.0, init);
  for (int i = 0; i < 3; ++i) {
    Params cur;
    cur.add("w", randn({5}, rng));
    ema.update(cur);
    CHECK(ema.shadow() == cur);
  }
  CHECK_THROWS(Ema(1.0, init));
}

}  // TEST_SUITE
