#include "batman/ablation.hpp"

#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "batman/parallel.hpp"
#include "batman/rng.hpp"
#include "batman/trainer.hpp"

namespace batman {

std::string arm_name(AttentionArm attention, FlowArm flow) {
  std::string name = attention == AttentionArm::kBilateral ? "bilateral" : "spatial_local";
  name += flow == FlowArm::kCalibrated ? "+calibrated" : "+raw";
  return name;
}

ModelConfig arm_config(const ModelConfig& base, AttentionArm attention, FlowArm flow) {
  ModelConfig cfg = attention == AttentionArm::kSpatialLocal ? spatial_local_variant(base) : base;
  if (flow == FlowArm::kRaw) cfg.calibrate = false;
  return cfg;
}

namespace {

std::string scene_label(std::size_t index, const SyntheticScene& scene) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03zu", category_name(scene.category).c_str(), index);
  return buf;
}

}  // namespace

std::vector<SequenceEval> evaluate_scenes(const Params& weights, const ModelConfig& cfg,
                                          const std::vector<SyntheticScene>& scenes, std::uint64_t noise_seed) {
  std::vector<SequenceEval> out(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const SyntheticSequence seq = generate_sequence(scenes[i]);
      Rng rng(derive_seed(noise_seed, scenes[i].seed, i));
      const auto flows = noisy_flows(seq, scenes[i].flow_noise, rng);
      SegmentResult r = segment_sequence(seq.frames, seq.masks.front(), flows, weights, cfg);
      SequenceEval& e = out[i];
      e.name = scene_label(i, scenes[i]);
      e.category = scenes[i].category;
      e.scores = score_sequence(e.name, r.masks, seq.masks);
      e.masks = std::move(r.masks);
    }
  });
  return out;
}

JFSummary summarize(const std::vector<SequenceEval>& evals) {
  std::vector<FrameScore> all;
  for (const auto& e : evals) all.insert(all.end(), e.scores.begin(), e.scores.end());
  return jf_report(all);
}

ArmModel load_arm(AttentionArm attention, FlowArm flow, const std::filesystem::path& stem) {
  std::filesystem::path manifest = stem;
  manifest += ".json";
  if (!std::filesystem::exists(manifest)) {
    throw std::invalid_argument("ablation arm " + arm_name(attention, flow) + ": missing checkpoint " +
                                stem.string());
  }
  ArmModel arm;
  arm.attention = attention;
  arm.flow = flow;
  arm.weights = load_model(stem, &arm.config);
  return arm;
}

const AblationRow& AblationReport::find(const std::string& arm, const std::string& category) const {
  for (const auto& r : rows)
    if (r.arm == arm && r.category == category) return r;
  throw std::out_of_range("ablation report has no row " + arm + "/" + category);
}

AblationReport run_ablation(const std::vector<SyntheticScene>& suite, const std::vector<ArmModel>& arms,
                            std::uint64_t noise_seed) {
  if (suite.empty()) throw std::invalid_argument("run_ablation: empty suite");
  if (arms.empty()) throw std::invalid_argument("run_ablation: no arms");
  std::vector<SceneCategory> categories;
  for (const auto& s : suite) {
    bool seen = false;
    for (auto c : categories) seen = seen || c == s.category;
    if (!seen) categories.push_back(s.category);
  }
  AblationReport report;
  for (const auto& arm : arms) {
    if (arm.weights.size() == 0) {
      throw std::invalid_argument("run_ablation: arm " + arm_name(arm.attention, arm.flow) + " has no weights");
    }
    const std::string name = arm_name(arm.attention, arm.flow);
    const auto evals = evaluate_scenes(arm.weights, arm_config(arm.config, arm.attention, arm.flow), suite, noise_seed);
    for (auto category : categories) {
      std::vector<FrameScore> scores;
      std::size_t sequences = 0;
      for (const auto& e : evals) {
        if (e.category != category) continue;
        ++sequences;
        for (FrameScore s : e.scores) {
          s.sequence = name + "/" + s.sequence;
          scores.push_back(s);
        }
      }
      report.rows.push_back({name, category_name(category), sequences, jf_report(scores)});
      report.scores.insert(report.scores.end(), scores.begin(), scores.end());
    }
  }
  return report;
}

void write_ablation_csv(std::ostream& out, const AblationReport& report) {
  out << "arm,category,sequences,J,F,JF\n";
  char buf[128];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f", r.summary.j, r.summary.f, r.summary.jf);
    out << r.arm << ',' << r.category << ',' << r.sequences << ',' << buf << '\n';
  }
}

nlohmann::json ablation_json(const AblationReport& report) {
  nlohmann::json arms = nlohmann::json::object();
  for (const auto& r : report.rows) {
    nlohmann::json entry = summary_json(r.summary);
    entry["sequences"] = r.sequences;
    arms[r.arm][r.category] = entry;
  }
  return {{"arms", arms}};
}

void print_ablation_table(std::ostream& out, const AblationReport& report) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-26s %-16s %5s %7s %7s %7s\n", "arm", "category", "seqs", "J", "F", "J&F");
  out << buf;
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%-26s %-16s %5zu %7.4f %7.4f %7.4f\n", r.arm.c_str(), r.category.c_str(),
                  r.sequences, r.summary.j, r.summary.f, r.summary.jf);
    out << buf;
  }
}

}  // namespace batman
