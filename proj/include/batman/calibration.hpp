#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "batman/autograd.hpp"
#include "batman/flow.hpp"
#include "batman/params.hpp"

namespace batman {

/// U-shaped calibration network: stride-2 3x3 convs down, nearest x2
/// upsample + 3x3 conv up, skips joined by channel concatenation. Input is
/// (u, v, previous mask); output is a residual added to the input flow.
struct CalibConfig {
  std::vector<std::size_t> channels{16, 32, 64};
  /// Adds a final 3x3 refinement conv after the up path.
  bool refine_head = false;

  std::size_t depth() const { return channels.size(); }
  std::size_t layer_count() const { return 2 * depth() + (refine_head ? 1 : 0); }
  /// 3 down + 3 up, channels 16/32/64.
  static CalibConfig toy();
  /// 5 down + 5 up + refinement head = 11 conv layers. Untrained preset.
  static CalibConfig eleven_layer();
};

/// Fresh weights; the last layer is zero so the network starts as identity.
Params init_calibration(const CalibConfig& cfg, Rng& rng, const std::string& prefix = "calib.");

/// Calibrated flow [2 x H x W] on the tape.
Var calibrate_flow(const BoundParams& p, const CalibConfig& cfg, Var init_flow, Var prev_mask,
                   const std::string& prefix = "calib.");

FlowField calibrate_flow(const FlowField& init_flow, const Tensor& prev_mask, const Params& weights,
                         const CalibConfig& cfg, const std::string& prefix = "calib.");

/// Mean over pixels and both components of the squared difference.
double flow_mse(const FlowField& init, const FlowField& out);
Var flow_mse(Var a, Var b);

struct MaskedTotalVariation {
  double inside = 0.0;   // pairs with both pixels in the mask
  double outside = 0.0;  // pairs with both pixels outside the mask
  std::size_t inside_pairs = 0;
  std::size_t outside_pairs = 0;
};

/// For each direction (horizontal, vertical), the mean over qualifying
/// neighbour pairs of |du| + |dv|; the two directional means are summed.
MaskedTotalVariation masked_total_variation(const FlowField& flow, const Tensor& mask);

}  // namespace batman
