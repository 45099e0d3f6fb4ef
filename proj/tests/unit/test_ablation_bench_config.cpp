#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "batman/ablation.hpp"
#include "batman/bench.hpp"
#include "batman/config.hpp"

using namespace batman;

namespace {

SceneOptions small_scenes() {
  SceneOptions o;
  o.height = 32;
  o.width = 32;
  o.frames = 3;
  return o;
}

ModelConfig tiny_model() {
  ModelConfig m = ModelConfig::toy();
  m.num_blocks = 1;
  return m;
}

ArmModel arm(AttentionArm a, FlowArm f, const Params& w) {
  ArmModel m;
  m.attention = a;
  m.flow = f;
  m.config = tiny_model();
  m.weights = w;
  return m;
}

}  // namespace

TEST_SUITE("ablation") {

TEST_CASE("arm names and configs") {
  CHECK(arm_name(AttentionArm::kBilateral, FlowArm::kCalibrated) == "bilateral+calibrated");
  CHECK(arm_name(AttentionArm::kSpatialLocal, FlowArm::kRaw) == "spatial_local+raw");
  const ModelConfig base = ModelConfig::toy();
  const ModelConfig sl = arm_config(base, AttentionArm::kSpatialLocal, FlowArm::kCalibrated);
  CHECK(sl.attention.rank_window == base.attention.max_rank_window());
  CHECK(sl.calibrate);
  CHECK_FALSE(arm_config(base, AttentionArm::kBilateral, FlowArm::kRaw).calibrate);
  CHECK(arm_config(base, AttentionArm::kBilateral, FlowArm::kCalibrated).attention.rank_window ==
        base.attention.rank_window);
}

TEST_CASE("report has one row per arm and category") {
  const Params w = init_model(tiny_model(), 1);
  const auto suite = make_ablation_suite(2, 1, small_scenes());
  const AblationReport r = run_ablation(
      suite, {arm(AttentionArm::kBilateral, FlowArm::kCalibrated, w), arm(AttentionArm::kSpatialLocal, FlowArm::kCalibrated, w)});
  REQUIRE(r.rows.size() == 8);
  CHECK(r.rows[0].arm == "bilateral+calibrated");
  CHECK(r.rows[0].category == "twin");
  CHECK(r.rows[3].category == "noisy_flow");
  CHECK(r.rows[4].arm == "spatial_local+calibrated");
  for (const auto& row : r.rows) {
    CHECK(row.sequences == 1);
    CHECK(row.summary.jf >= 0.0);
    CHECK(row.summary.jf <= 1.0);
  }
  CHECK(r.find("spatial_local+calibrated", "distractor").arm == "spatial_local+calibrated");
  CHECK_THROWS(r.find("nope", "twin"));
  CHECK(r.scores.front().sequence.rfind("bilateral+calibrated/twin_000", 0) == 0);

  std::ostringstream csv;
  write_ablation_csv(csv, r);
  CHECK(csv.str().rfind("arm,category,sequences,J,F,JF\n", 0) == 0);
  const nlohmann::json j = ablation_json(r);
  CHECK(j["arms"]["bilateral+calibrated"]["twin"]["sequences"] == 1);
}

TEST_CASE("identical weights and arms give identical scores") {
  const Params w = init_model(tiny_model(), 2);
  const auto suite = make_ablation_suite(3, 1, small_scenes());
  const AblationReport a = run_ablation(suite, {arm(AttentionArm::kBilateral, FlowArm::kRaw, w)}, 5);
  const AblationReport b = run_ablation(suite, {arm(AttentionArm::kBilateral, FlowArm::kRaw, w)}, 5);
  REQUIRE(a.scores.size() == b.scores.size());
  for (std::size_t i = 0; i < a.scores.size(); ++i) {
    CHECK(a.scores[i].j == b.scores[i].j);
    CHECK(a.scores[i].f == b.scores[i].f);
  }
}

TEST_CASE("spatial-local arm equals bilateral with the maximal rank window") {
  const Params w = init_model(tiny_model(), 3);
  const auto suite = make_ablation_suite(4, 1, small_scenes());
  ModelConfig wide = tiny_model();
  wide.attention.rank_window = wide.attention.max_rank_window();
  const auto direct = evaluate_scenes(w, wide, suite, 9);
  const auto via_arm =
      evaluate_scenes(w, arm_config(tiny_model(), AttentionArm::kSpatialLocal, FlowArm::kCalibrated), suite, 9);
  for (std::size_t i = 0; i < suite.size(); ++i) CHECK(direct[i].masks == via_arm[i].masks);
}

TEST_CASE("missing checkpoints and empty inputs are rejected") {
  CHECK_THROWS_AS(load_arm(AttentionArm::kBilateral, FlowArm::kCalibrated,
                           std::filesystem::temp_directory_path() / "batman_no_such_ckpt"),
                  std::invalid_argument);
  const auto suite = make_ablation_suite(1, 1, small_scenes());
  CHECK_THROWS(run_ablation(suite, {}));
  CHECK_THROWS(run_ablation({}, {arm(AttentionArm::kBilateral, FlowArm::kRaw, init_model(tiny_model(), 1))}));
  CHECK_THROWS(run_ablation(suite, {arm(AttentionArm::kBilateral, FlowArm::kRaw, Params{})}));
}

}  // TEST_SUITE

TEST_SUITE("bench") {

TEST_CASE("log-log slope of a power law") {
  const std::vector<double> x{1, 2, 4, 8, 16};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 * std::pow(v, 1.7));
  CHECK(loglog_slope(x, y) == doctest::Approx(1.7));
  CHECK_THROWS(loglog_slope({1.0}, {2.0}));
}

TEST_CASE("small bench run") {
  BenchConfig cfg;
  cfg.sides = {8, 12};
  cfg.reps = 2;
  cfg.attention = AttentionConfig::toy();
  const BenchReport r = bench_attention(cfg);
  CHECK(r.rows.size() == 4);
  CHECK(r.candidate_bound == 25);
  for (const auto& row : r.rows) {
    CHECK(row.median_seconds > 0.0);
    CHECK(row.max_candidates <= r.candidate_bound);
    CHECK(row.tokens == row.side * row.side);
  }
  std::ostringstream csv;
  write_bench_csv(csv, r);
  CHECK(csv.str().rfind("variant,side,tokens,median_seconds,mean_candidates,max_candidates\n", 0) == 0);
  CHECK(bench_json(r).contains("slope_gap"));
}

TEST_CASE("bench config validation") {
  BenchConfig cfg;
  cfg.sides = {32, 16};
  CHECK_THROWS(cfg.validate());
  cfg.sides = {16};
  CHECK_THROWS(cfg.validate());
  cfg.sides = {16, 32};
  cfg.reps = 0;
  CHECK_THROWS(cfg.validate());
}

}  // TEST_SUITE

TEST_SUITE("config") {

TEST_CASE("run config json round trip") {
  const RunConfig cfg;
  const nlohmann::json j = to_json(cfg);
  CHECK(to_json(run_config_from_json(j)) == j);
  CHECK(j.contains("model"));
  CHECK(j.contains("threads"));
}

TEST_CASE("overrides parse json values and fall back to strings") {
  nlohmann::json doc = to_json(RunConfig{});
  apply_overrides(doc, {"train.iterations=12", "model.bilateral_variant=exact", "train.lr=0.5", "threads=3"});
  CHECK(doc["train"]["iterations"] == 12);
  CHECK(doc["model"]["bilateral_variant"] == "exact");
  CHECK(doc["train"]["lr"] == 0.5);
  const RunConfig cfg = run_config_from_json(doc);
  CHECK(cfg.train.iterations == 12);
  CHECK(cfg.threads == 3);
  CHECK(cfg.model.bilateral_variant == AttentionVariant::kExact);
  CHECK_THROWS(apply_overrides(doc, {"no_equals_sign"}));
}

TEST_CASE("unknown top-level keys are rejected") {
  CHECK_THROWS(run_config_from_json(nlohmann::json{{"trian", nlohmann::json::object()}}));
}

TEST_CASE("load run config from a file with overrides") {
  const auto path = std::filesystem::temp_directory_path() / "batman_config_test.json";
  {
    std::ofstream out(path);
    out << R"({"train": {"iterations": 7}, "eval": {"per_category": 2}})";
  }
  const RunConfig cfg = load_run_config(path, {"train.iterations=9"});
  CHECK(cfg.train.iterations == 9);
  CHECK(cfg.eval.per_category == 2);
  CHECK(load_run_config("").train.iterations == TrainConfig{}.iterations);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
