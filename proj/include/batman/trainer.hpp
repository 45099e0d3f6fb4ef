#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "batman/flow.hpp"
#include "batman/label_map.hpp"
#include "batman/model.hpp"
#include "batman/optim.hpp"
#include "batman/params.hpp"
#include "batman/synthetic.hpp"

namespace batman {

struct TrainConfig {
  double lr = 2e-4;
  double weight_decay = 0.07;
  std::size_t iterations = 500;
  std::size_t batch_size = 4;
  double w_ce = 1.0;
  double w_jaccard = 1.0;
  double w_mse = 0.1;
  double top_fraction = 0.15;
  double ema_decay = 0.999;
  std::uint64_t seed = 0;
  SceneOptions scenes;
  std::size_t log_every = 50;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Reference frame 0, previous frame t-1 (ground-truth mask) and query t.
struct TrainSample {
  Tensor ref_frame;
  LabelMap ref_mask;
  Tensor prev_frame;
  LabelMap prev_mask;
  Tensor query_frame;
  LabelMap query_mask;
  FlowField flow;  // t-1 -> t, noise already added
  std::size_t t = 1;
};

class Dataset {
 public:
  virtual ~Dataset() = default;
  /// Deterministic in (iteration, slot).
  virtual TrainSample sample(std::size_t iteration, std::size_t slot) const = 0;
};

/// Draws training_scene(seed, index) and a query index per (iteration, slot).
class SyntheticDataset : public Dataset {
 public:
  SyntheticDataset(std::uint64_t seed, SceneOptions options, std::size_t batch_size);
  TrainSample sample(std::size_t iteration, std::size_t slot) const override;

 private:
  std::uint64_t seed_;
  SceneOptions options_;
  std::size_t batch_size_;
};

struct LossTerms {
  double total = 0.0;
  double ce = 0.0;
  double jaccard = 0.0;
  double mse = 0.0;
};

/// Total loss of one sample on the tape behind `p`.
Var sample_loss(const BoundParams& p, const ModelConfig& mcfg, const TrainConfig& tcfg, const TrainSample& s,
                LossTerms* terms = nullptr);
/// Loss of one sample; fills `grads` (aligned with `weights`) when non-null.
LossTerms sample_loss(const Params& weights, const ModelConfig& mcfg, const TrainConfig& tcfg,
                      const TrainSample& s, std::vector<Tensor>* grads);

struct TrainStep {
  std::size_t iteration = 0;
  LossTerms loss;
};

struct TrainResult {
  Params weights;
  Params ema;
  std::vector<TrainStep> curve;
  bool diverged = false;
  std::size_t completed = 0;
  std::string message;
};

using TrainCallback = std::function<void(const TrainStep&)>;
/// AdamW + EMA. On a non-finite loss, gradient or intermediate (NonFiniteError),
/// stops and returns the last finite weights with `diverged` set.
/// finite weights with `diverged` set.
TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg, const Dataset& data,
                  const TrainCallback& on_step = {});

/// Writes the EMA weights as the checkpoint `stem` (configs in the manifest
/// metadata) and the loss curve as `<stem>.loss.csv`.
void save_training(const std::filesystem::path& stem, const TrainResult& r, const ModelConfig& mcfg,
                   const TrainConfig& tcfg);
void write_loss_csv(std::ostream& out, const std::vector<TrainStep>& curve);

/// Loads a checkpoint written by save_training; the model config comes from its metadata.
Params load_model(const std::filesystem::path& stem, ModelConfig* cfg);

// --- calibration pretext training ---------------------------------------------

struct CalibTrainConfig {
  std::size_t steps = 300;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double noise_sigma = 1.5;
  /// Weight of the tether term flow_mse(calibrated, noisy input).
  double w_tether = 0.1;
  std::uint64_t seed = 0;
  SceneOptions scenes;
};

struct CalibSample {
  FlowField noisy;
  FlowField clean;
  Tensor mask;  // foreground of the frame the flow is sampled at
};

/// Noisy-flow scene `index` of stream `seed`, one random frame pair.
CalibSample calibration_sample(std::uint64_t seed, std::size_t index, const CalibTrainConfig& cfg);

/// Minimises flow_mse(calibrated, clean) + w_tether * flow_mse(calibrated, noisy).
Params train_calibration(const CalibConfig& ccfg, const CalibTrainConfig& tcfg, std::vector<double>* curve = nullptr);

struct CalibEvaluation {
  double mse_noisy = 0.0;       // flow_mse(noisy, clean)
  double mse_calibrated = 0.0;  // flow_mse(calibrated, clean)
  double tv_inside_noisy = 0.0;
  double tv_inside_calibrated = 0.0;
  std::size_t samples = 0;
};

CalibEvaluation evaluate_calibration(const Params& weights, const CalibConfig& ccfg, const CalibTrainConfig& tcfg,
                                     std::uint64_t heldout_seed, std::size_t count);

}  // namespace batman
