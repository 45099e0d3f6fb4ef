#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "batman/attention.hpp"
#include "batman/calibration.hpp"
#include "batman/flow.hpp"
#include "batman/label_map.hpp"
#include "batman/params.hpp"

namespace batman {

struct ModelConfig {
  static constexpr std::size_t kStride = 4;

  std::size_t channels = 64;
  std::size_t num_blocks = 2;
  std::size_t max_objects = 3;
  std::size_t flow_channels = 16;
  std::size_t mlp_hidden = 128;
  /// Query encoder: 3x3 s1, 3x3 s2, 3x3 s2, then 1x1 to `channels`.
  std::vector<std::size_t> encoder_channels{8, 16, 32};
  /// Decoder: 1x1 from tokens, 3x3 after the stride-2 skip, 3x3 after the full-resolution skip.
  std::vector<std::size_t> decoder_channels{16, 16, 8};
  AttentionConfig attention = AttentionConfig::toy(64);
  AttentionVariant bilateral_variant = AttentionVariant::kWindowed;
  bool calibrate = true;
  CalibConfig calibration = CalibConfig::toy();
  std::size_t memory_capacity = 2;

  std::size_t slots() const { return max_objects + 1; }
  void validate() const;

  static ModelConfig toy();
  /// 12 blocks, C = 256, W_d = 7, W_b = 84, 8 heads, 11-layer calibration.
  static ModelConfig full();
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Overrides fields of `base` present in `j`.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = ModelConfig::toy());

/// Same config with W_b maximal: the mask becomes the fixed spatial window.
ModelConfig spatial_local_variant(const ModelConfig& cfg);

Params init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Token grid of sinusoidal embeddings: channels [0, C/2) encode the row,
/// [C/2, C) the column; within each half channel 2i is sin(p / 10000^(2i/(C/2)))
/// and 2i+1 the matching cos.
TokenGrid sinusoidal_pos_embed(std::size_t height, std::size_t width, std::size_t channels);

// --- tape-level building blocks --------------------------------------------

struct QueryEncoding {
  Var tokens;  // [h*w x C]
  Var skip1;   // full resolution
  Var skip2;   // stride 2
  std::size_t height = 0;
  std::size_t width = 0;
};

QueryEncoding encode_query(const BoundParams& p, const ModelConfig& cfg, Var frame);
/// Features plus the id embedding of the nearest-downscaled label of each token.
Var encode_memory(const BoundParams& p, const ModelConfig& cfg, Var features, const LabelMap& mask);
/// Two stride-2 convolutions over (u, v): [h*w x flow_channels].
Var encode_flow(const BoundParams& p, const ModelConfig& cfg, Var flow);

struct MemoryVar {
  Var features;
  Var encoding;
};

struct BlockInputs {
  Var pos;          // [HW x C]
  Var mem_pos;      // pos repeated per memory frame
  Var mem_features; // [T*HW x C]
  Var mem_encoding; // [T*HW x C]
  const BilateralMask* mask = nullptr;
  std::optional<Var> e;
};

Var transformer_block(const BoundParams& p, const ModelConfig& cfg, std::size_t block, Var x,
                      const BlockInputs& in);

/// Logits [slots x H x W] at image resolution.
Var decode_mask(const BoundParams& p, const ModelConfig& cfg, Var tokens, const QueryEncoding& enc, Var frame);

struct FrameOutput {
  Var logits;
  Var flow;  // calibrated (or raw) flow fed to the flow encoder
  Var init_flow;
  Var e;
  BilateralMask mask;
  QueryEncoding query;
};

/// Segments one query frame against the given memory.
FrameOutput forward_frame(const BoundParams& p, const ModelConfig& cfg, Var frame, const FlowField& init_flow,
                          const Tensor& prev_foreground, const std::vector<MemoryVar>& memory);

// --- value-level API ---------------------------------------------------------

TokenGrid encode_query(const Tensor& frame, const Params& w, const ModelConfig& cfg);
TokenGrid encode_memory(const Tensor& frame, const LabelMap& mask, const Params& w, const ModelConfig& cfg);

/// First frame plus the most recent ones, up to `capacity`.
class FrameMemory {
 public:
  struct Entry {
    TokenGrid features;
    TokenGrid encoding;
    std::size_t frame = 0;
  };

  explicit FrameMemory(std::size_t capacity = 2);
  void insert(Entry entry);
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<std::size_t> frames() const;
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::vector<Entry> entries_;
};

/// Builds the bilateral mask from `e` and runs block `block`.
TokenGrid transformer_block_forward(const TokenGrid& q, const FrameMemory& mem, const BilateralEncoding& e,
                                    const Params& w, const ModelConfig& cfg, std::size_t block);

/// Runs the query encoder on `frame` for the skips, then decodes `features`.
Tensor decode_mask(const TokenGrid& features, const Tensor& frame, const Params& w, const ModelConfig& cfg);

/// Per-pixel argmax over slots 0..max_label (ties go to the lower slot).
LabelMap argmax_labels(const Tensor& logits, int max_label);

struct FrameDiagnostics {
  std::size_t frame = 0;
  double mean_admitted = 0.0;    // admitted keys per query per memory frame
  std::size_t max_admitted = 0;
  double calibration_delta = 0.0;  // flow_mse(init, calibrated)
  std::vector<std::size_t> memory_frames;
  std::vector<double> j;  // per object, when ground truth is given
  std::vector<double> f;
};

struct SegmentResult {
  std::vector<LabelMap> masks;
  std::vector<FrameDiagnostics> diagnostics;
};

/// flows[t] maps frame t to t+1. Frame 0 is given by `first_mask`.
SegmentResult segment_sequence(const std::vector<Tensor>& frames, const LabelMap& first_mask,
                               const std::vector<FlowField>& flows, const Params& w, const ModelConfig& cfg,
                               const std::vector<LabelMap>* ground_truth = nullptr);

}  // namespace batman
