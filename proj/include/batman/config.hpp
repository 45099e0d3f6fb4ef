#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "batman/bench.hpp"
#include "batman/model.hpp"
#include "batman/trainer.hpp"

namespace batman {

struct EvalConfig {
  std::uint64_t suite_seed = 1000;
  std::size_t per_category = 4;
  std::uint64_t noise_seed = 7;
};

/// Everything the command-line tool reads, one JSON object with sections
/// "model", "train", "calibration", "bench", "eval" and a top-level "threads".
struct RunConfig {
  ModelConfig model = ModelConfig::toy();
  TrainConfig train;
  CalibTrainConfig calibration;
  BenchConfig bench;
  EvalConfig eval;
  std::size_t threads = 1;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies "section.key=value" assignments to a JSON document. The value is
/// parsed as JSON when possible and kept as a string otherwise.
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& assignments);

/// Reads `path` (empty: defaults only), then applies the overrides.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace batman
