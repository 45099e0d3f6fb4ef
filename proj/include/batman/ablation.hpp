#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "batman/metrics.hpp"
#include "batman/model.hpp"
#include "batman/synthetic.hpp"

namespace batman {

enum class AttentionArm { kBilateral, kSpatialLocal };
enum class FlowArm { kCalibrated, kRaw };

std::string arm_name(AttentionArm attention, FlowArm flow);
/// spatial_local sets W_b maximal; raw skips flow calibration. Weights are
/// shared, so one checkpoint serves every arm it was not trained against.
ModelConfig arm_config(const ModelConfig& base, AttentionArm attention, FlowArm flow);

struct SequenceEval {
  std::string name;
  SceneCategory category = SceneCategory::kSingle;
  std::vector<FrameScore> scores;
  std::vector<LabelMap> masks;
};

/// Segments every scene from its first ground-truth mask, feeding flows with
/// the scene's own noise level (drawn from `noise_seed`).
std::vector<SequenceEval> evaluate_scenes(const Params& weights, const ModelConfig& cfg,
                                          const std::vector<SyntheticScene>& scenes, std::uint64_t noise_seed = 0);

JFSummary summarize(const std::vector<SequenceEval>& evals);

struct ArmModel {
  AttentionArm attention = AttentionArm::kBilateral;
  FlowArm flow = FlowArm::kCalibrated;
  ModelConfig config;  // before arm_config is applied
  Params weights;
};

/// Loads a checkpoint for one arm; a missing checkpoint is rejected.
ArmModel load_arm(AttentionArm attention, FlowArm flow, const std::filesystem::path& stem);

struct AblationRow {
  std::string arm;
  std::string category;
  std::size_t sequences = 0;
  JFSummary summary;
};

struct AblationReport {
  std::vector<AblationRow> rows;    // arm-major, categories in suite order
  std::vector<FrameScore> scores;   // sequence = "<arm>/<scene>"

  const AblationRow& find(const std::string& arm, const std::string& category) const;
};

AblationReport run_ablation(const std::vector<SyntheticScene>& suite, const std::vector<ArmModel>& arms,
                            std::uint64_t noise_seed = 0);

void write_ablation_csv(std::ostream& out, const AblationReport& report);
nlohmann::json ablation_json(const AblationReport& report);
/// Fixed-width table, one line per row.
void print_ablation_table(std::ostream& out, const AblationReport& report);

}  // namespace batman
