#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "batman/ablation.hpp"
#include "batman/bench.hpp"
#include "batman/calibration.hpp"
#include "batman/config.hpp"
#include "batman/flow.hpp"
#include "batman/gradcheck.hpp"
#include "batman/metrics.hpp"
#include "batman/parallel.hpp"
#include "batman/synthetic.hpp"
#include "batman/trainer.hpp"

namespace fs = std::filesystem;
using namespace batman;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::size_t threads = 0;

  RunConfig load() const {
    RunConfig cfg = load_run_config(config, overrides);
    if (threads) cfg.threads = threads;
    set_num_threads(cfg.threads);
    return cfg;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON configuration file");
  app->add_option("--set", c.overrides, "Override, e.g. train.lr=1e-3 (repeatable)");
  app->add_option("--threads", c.threads, "Worker threads (overrides config)");
}

AttentionArm parse_attention_arm(const std::string& s) {
  if (s == "bilateral") return AttentionArm::kBilateral;
  if (s == "spatial_local") return AttentionArm::kSpatialLocal;
  throw CLI::ValidationError("--arm", "expected bilateral or spatial_local, got " + s);
}

FlowArm parse_flow_arm(const std::string& s) {
  if (s == "calibrated") return FlowArm::kCalibrated;
  if (s == "raw") return FlowArm::kRaw;
  throw CLI::ValidationError("--flow", "expected calibrated or raw, got " + s);
}

void write_json(const fs::path& path, const nlohmann::json& j) { std::ofstream(path) << j.dump(2) << '\n'; }

io::RgbImage colorize(const LabelMap& m) {
  static const std::uint8_t palette[][3] = {{0, 0, 0},     {230, 60, 60},  {60, 200, 80},  {70, 110, 240},
                                            {240, 200, 40}, {200, 80, 220}, {40, 210, 220}, {250, 140, 40},
                                            {150, 150, 150}, {120, 60, 30}, {255, 255, 255}};
  io::RgbImage img{m.width, m.height, std::vector<std::uint8_t>(m.labels.size() * 3)};
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    const auto* c = palette[m.labels[i] % std::size(palette)];
    for (int k = 0; k < 3; ++k) img.pixels[3 * i + k] = c[k];
  }
  return img;
}

int cmd_gen_data(const Common& common, const std::string& out, const std::string& kind, std::uint64_t seed,
                 std::size_t count, const std::string& category) {
  const RunConfig cfg = common.load();
  std::vector<SyntheticScene> scenes;
  if (kind == "suite") {
    scenes = make_ablation_suite(seed, count, cfg.train.scenes);
  } else if (kind == "training") {
    for (std::size_t i = 0; i < count; ++i) scenes.push_back(training_scene(seed, i, cfg.train.scenes));
  } else if (kind == "category") {
    const SceneCategory c = parse_category(category);
    for (std::size_t i = 0; i < count; ++i) scenes.push_back(random_scene(derive_seed(seed, i), c, cfg.train.scenes));
  } else {
    throw CLI::ValidationError("--kind", "expected suite, training or category");
  }
  write_dataset(out, scenes);
  std::cout << "wrote " << scenes.size() << " scenes to " << out << '\n';
  return 0;
}

int cmd_train(const Common& common, const std::string& out, const std::string& arm, const std::string& flow,
              bool calibration_only) {
  const RunConfig cfg = common.load();
  fs::path stem(out);
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  if (calibration_only) {
    std::vector<double> curve;
    const Params w = train_calibration(cfg.model.calibration, cfg.calibration, &curve);
    save_checkpoint(stem, w, {{"kind", "calibration"}, {"config", to_json(cfg)}});
    std::ofstream csv(stem.string() + ".loss.csv");
    csv << "step,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) csv << i << ',' << curve[i] << '\n';
    const CalibEvaluation ev = evaluate_calibration(w, cfg.model.calibration, cfg.calibration,
                                                    derive_seed(cfg.calibration.seed, 0x4e1d), 32);
    std::printf("held-out mse noisy=%.5f calibrated=%.5f  tv_inside noisy=%.5f calibrated=%.5f\n", ev.mse_noisy,
                ev.mse_calibrated, ev.tv_inside_noisy, ev.tv_inside_calibrated);
    return 0;
  }
  const ModelConfig mcfg = arm_config(cfg.model, parse_attention_arm(arm), parse_flow_arm(flow));
  SyntheticDataset data(cfg.train.seed, cfg.train.scenes, cfg.train.batch_size);
  const std::size_t every = std::max<std::size_t>(1, cfg.train.log_every);
  const TrainResult r = train(mcfg, cfg.train, data, [&](const TrainStep& s) {
    if (s.iteration % every == 0 || s.iteration + 1 == cfg.train.iterations) {
      std::printf("iter %5zu  loss %.5f  ce %.5f  jaccard %.5f  mse %.6f\n", s.iteration, s.loss.total, s.loss.ce,
                  s.loss.jaccard, s.loss.mse);
      std::fflush(stdout);
    }
  });
  save_training(stem, r, mcfg, cfg.train);
  if (r.diverged) {
    std::cerr << "training diverged: " << r.message << " (kept weights after " << r.completed << " steps)\n";
    return 3;
  }
  std::cout << "saved " << stem.string() << " after " << r.completed << " iterations\n";
  return 0;
}

int cmd_eval(const Common& common, const std::string& checkpoint, const std::string& data, const std::string& out,
             const std::string& arm, const std::string& flow, const std::string& category, bool save_masks) {
  const RunConfig cfg = common.load();
  ModelConfig mcfg;
  const Params w = load_model(checkpoint, &mcfg);
  mcfg = arm_config(mcfg, parse_attention_arm(arm), parse_flow_arm(flow));
  fs::create_directories(out);
  std::vector<FrameScore> all;
  if (!data.empty()) {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(data))
      if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    Rng rng(cfg.eval.noise_seed);
    for (const auto& dir : dirs) {
      const SyntheticSequence seq = read_sequence_dir(dir);
      const auto flows = noisy_flows(seq, seq.scene.flow_noise, rng);
      const SegmentResult r = segment_sequence(seq.frames, seq.masks.front(), flows, w, mcfg);
      const auto scores = score_sequence(dir.filename().string(), r.masks, seq.masks);
      all.insert(all.end(), scores.begin(), scores.end());
      if (save_masks) {
        fs::create_directories(fs::path(out) / dir.filename());
        for (std::size_t t = 0; t < r.masks.size(); ++t) {
          char name[32];
          std::snprintf(name, sizeof name, "pred_%02zu.pgm", t);
          write_label_pgm(fs::path(out) / dir.filename() / name, r.masks[t]);
        }
      }
    }
  } else {
    std::vector<SyntheticScene> scenes;
    if (category.empty()) {
      scenes = make_ablation_suite(cfg.eval.suite_seed, cfg.eval.per_category, cfg.train.scenes);
    } else {
      const SceneCategory c = parse_category(category);
      for (std::size_t i = 0; i < cfg.eval.per_category; ++i)
        scenes.push_back(random_scene(derive_seed(cfg.eval.suite_seed, i), c, cfg.train.scenes));
    }
    const auto evals = evaluate_scenes(w, mcfg, scenes, cfg.eval.noise_seed);
    for (const auto& e : evals) {
      all.insert(all.end(), e.scores.begin(), e.scores.end());
      if (save_masks) {
        fs::create_directories(fs::path(out) / e.name);
        for (std::size_t t = 0; t < e.masks.size(); ++t) {
          char name[32];
          std::snprintf(name, sizeof name, "pred_%02zu.pgm", t);
          write_label_pgm(fs::path(out) / e.name / name, e.masks[t]);
        }
      }
    }
  }
  std::ofstream csv(fs::path(out) / "scores.csv");
  write_scores_csv(csv, all);
  const JFSummary s = jf_report(all);
  write_json(fs::path(out) / "summary.json", summary_json(s));
  std::cout << summary_line(s) << '\n';
  return 0;
}

int cmd_ablate(const Common& common, const std::string& bilateral, const std::string& spatial,
               const std::string& bilateral_raw, const std::string& spatial_raw, const std::string& shared,
               const std::string& out) {
  const RunConfig cfg = common.load();
  struct Slot {
    AttentionArm a;
    FlowArm f;
    std::string stem;
  };
  std::vector<Slot> slots{{AttentionArm::kBilateral, FlowArm::kCalibrated, bilateral},
                          {AttentionArm::kSpatialLocal, FlowArm::kCalibrated, spatial},
                          {AttentionArm::kBilateral, FlowArm::kRaw, bilateral_raw},
                          {AttentionArm::kSpatialLocal, FlowArm::kRaw, spatial_raw}};
  std::vector<ArmModel> arms;
  for (auto& s : slots) {
    const std::string stem = !shared.empty() ? shared : s.stem;
    if (stem.empty()) continue;
    arms.push_back(load_arm(s.a, s.f, stem));
  }
  if (arms.empty()) throw CLI::ValidationError("ablate", "no checkpoints given");
  const auto suite = make_ablation_suite(cfg.eval.suite_seed, cfg.eval.per_category, cfg.train.scenes);
  const AblationReport report = run_ablation(suite, arms, cfg.eval.noise_seed);
  fs::create_directories(out);
  std::ofstream csv(fs::path(out) / "ablation.csv");
  write_ablation_csv(csv, report);
  std::ofstream scores(fs::path(out) / "scores.csv");
  write_scores_csv(scores, report.scores);
  write_json(fs::path(out) / "ablation.json", ablation_json(report));
  print_ablation_table(std::cout, report);
  return 0;
}

int cmd_bench(const Common& common, const std::string& out) {
  const RunConfig cfg = common.load();
  const BenchReport r = bench_attention(cfg.bench);
  for (const auto& row : r.rows) {
    std::printf("%-9s %4zux%-4zu %7zu tokens  %12.6f s  candidates mean %.2f max %zu\n", row.variant.c_str(),
                row.side, row.side, row.tokens, row.median_seconds, row.mean_candidates, row.max_candidates);
  }
  std::printf("slope dense %.3f  windowed %.3f  gap %.3f  (bound %zu candidates)\n", r.slope_dense, r.slope_windowed,
              r.slope_gap(), r.candidate_bound);
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream csv(fs::path(out) / "bench.csv");
    write_bench_csv(csv, r);
    write_json(fs::path(out) / "bench.json", bench_json(r));
  }
  return 0;
}

int cmd_viz_mask(const Common& common, const std::string& labels, const std::string& out, bool bilateral,
                 std::size_t side, std::size_t query, std::uint64_t seed) {
  const RunConfig cfg = common.load();
  if (bilateral) {
    Rng rng(seed);
    const BilateralEncoding e{randn({side * side, 1}, rng), side, side};
    const BilateralMask m = build_bilateral_mask(e, cfg.model.attention);
    if (query >= m.area()) throw CLI::ValidationError("--query", "outside the grid");
    m.write_overlay_pgm(out, query, cfg.model.attention.window_radius);
    std::cout << "query " << query << " admits " << m.count(query) << " keys\n";
    return 0;
  }
  if (labels.empty()) throw CLI::ValidationError("viz-mask", "--labels or --bilateral required");
  io::write_ppm(out, colorize(read_label_pgm(labels)));
  return 0;
}

int cmd_viz_flow(const std::string& flow, const std::string& out, double max_radius) {
  io::write_ppm(out, flow_to_color(load_bflo(flow), max_radius));
  return 0;
}

int cmd_gradcheck(const Common& common, std::size_t seeds, double tol, bool with_model) {
  common.load();
  bool ok = true;
  for (std::size_t s = 0; s < seeds; ++s) {
    std::vector<GradCheckCase> cases = operation_gradcheck_cases(s);
    if (with_model) cases.push_back(model_gradcheck_case(s));
    for (const auto& c : cases) {
      const GradCheckResult r = grad_check(c.f, c.inputs, c.options);
      const bool pass = r.passed(tol);
      ok = ok && pass;
      std::printf("%s seed %zu %-28s max_rel_err %.3e coords %zu%s%s\n", pass ? "ok  " : "FAIL", s, c.name.c_str(),
                  r.max_rel_error, r.coords_checked, r.message.empty() ? "" : "  ", r.message.c_str());
    }
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bilateral-attention video object segmentation toolkit"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-data", "Write synthetic sequences (PPM/PGM/BFLO + manifest)");
  add_common(gen, common);
  std::string gen_out, gen_kind = "suite", gen_category = "single";
  std::uint64_t gen_seed = 0;
  std::size_t gen_count = 4;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--kind", gen_kind, "suite | training | category");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--count", gen_count, "Scenes (per category for suite)");
  gen->add_option("--category", gen_category, "Category for --kind category");

  auto* tr = app.add_subcommand("train", "Train a model (or the calibration net alone)");
  add_common(tr, common);
  std::string tr_out, tr_arm = "bilateral", tr_flow = "calibrated";
  bool tr_calib = false;
  tr->add_option("--out", tr_out, "Checkpoint stem")->required();
  tr->add_option("--arm", tr_arm, "bilateral | spatial_local");
  tr->add_option("--flow", tr_flow, "calibrated | raw");
  tr->add_flag("--calibration-only", tr_calib, "Train only the flow calibration network");

  auto* ev = app.add_subcommand("eval", "Segment sequences and score J/F");
  add_common(ev, common);
  std::string ev_ckpt, ev_data, ev_out = "eval_out", ev_arm = "bilateral", ev_flow = "calibrated", ev_category;
  bool ev_masks = false;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint stem")->required();
  ev->add_option("--data", ev_data, "Dataset directory from gen-data (default: generated suite)");
  ev->add_option("--category", ev_category, "Generate this category instead of the ablation suite");
  ev->add_option("--out", ev_out, "Report directory");
  ev->add_option("--arm", ev_arm, "bilateral | spatial_local");
  ev->add_option("--flow", ev_flow, "calibrated | raw");
  ev->add_flag("--save-masks", ev_masks, "Write predicted masks as PGM");

  auto* ab = app.add_subcommand("ablate", "Compare arms on the ablation suite");
  add_common(ab, common);
  std::string ab_bi, ab_sl, ab_bi_raw, ab_sl_raw, ab_shared, ab_out = "ablation_out";
  ab->add_option("--bilateral", ab_bi, "Checkpoint for bilateral+calibrated");
  ab->add_option("--spatial-local", ab_sl, "Checkpoint for spatial_local+calibrated");
  ab->add_option("--bilateral-raw", ab_bi_raw, "Checkpoint for bilateral+raw");
  ab->add_option("--spatial-local-raw", ab_sl_raw, "Checkpoint for spatial_local+raw");
  ab->add_option("--shared", ab_shared, "One checkpoint evaluated under all four arms");
  ab->add_option("--out", ab_out, "Report directory");

  auto* be = app.add_subcommand("bench", "Time dense vs windowed attention");
  add_common(be, common);
  std::string be_out;
  be->add_option("--out", be_out, "Report directory");

  auto* vm = app.add_subcommand("viz-mask", "Colour a label PGM, or draw one query's bilateral mask");
  add_common(vm, common);
  std::string vm_labels, vm_out;
  bool vm_bilateral = false;
  std::size_t vm_side = 16, vm_query = 0;
  std::uint64_t vm_seed = 0;
  vm->add_option("--labels", vm_labels, "Label PGM to colour");
  vm->add_option("--out", vm_out, "Output image")->required();
  vm->add_flag("--bilateral", vm_bilateral, "Draw a mask built from random E");
  vm->add_option("--side", vm_side, "Grid side for --bilateral");
  vm->add_option("--query", vm_query, "Query position for --bilateral");
  vm->add_option("--seed", vm_seed, "Seed for the random E");

  auto* vf = app.add_subcommand("viz-flow", "Colour-wheel rendering of a BFLO flow file");
  std::string vf_flow, vf_out;
  double vf_radius = -1.0;
  vf->add_option("--flow", vf_flow, "BFLO file")->required();
  vf->add_option("--out", vf_out, "Output PPM")->required();
  vf->add_option("--max-radius", vf_radius, "Saturation radius in px (default: max magnitude)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks of every backward rule");
  add_common(gc, common);
  std::size_t gc_seeds = 10;
  double gc_tol = 1e-4;
  bool gc_no_model = false;
  gc->add_option("--seeds", gc_seeds, "Number of seeds");
  gc->add_option("--tol", gc_tol, "Relative error tolerance");
  gc->add_flag("--no-model", gc_no_model, "Skip the one-block model check");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen_data(common, gen_out, gen_kind, gen_seed, gen_count, gen_category);
    if (*tr) return cmd_train(common, tr_out, tr_arm, tr_flow, tr_calib);
    if (*ev) return cmd_eval(common, ev_ckpt, ev_data, ev_out, ev_arm, ev_flow, ev_category, ev_masks);
    if (*ab) return cmd_ablate(common, ab_bi, ab_sl, ab_bi_raw, ab_sl_raw, ab_shared, ab_out);
    if (*be) return cmd_bench(common, be_out);
    if (*vm) return cmd_viz_mask(common, vm_labels, vm_out, vm_bilateral, vm_side, vm_query, vm_seed);
    if (*vf) return cmd_viz_flow(vf_flow, vf_out, vf_radius);
    if (*gc) return cmd_gradcheck(common, gc_seeds, gc_tol, !gc_no_model);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
