#pragma once

#include <vector>

#include "batman/autograd.hpp"
#include "batman/tensor.hpp"

namespace batman {

// Segmentation losses over per-pixel rows: logits/probs are [N x S] with
// S = background + object slots, labels hold one slot index per pixel.

/// Per-pixel cross-entropy averaged over the ceil(top_fraction * N) largest
/// values (ties: lower pixel index first).
double bootstrapped_ce(const Tensor& logits, const std::vector<int>& labels, double top_fraction);
Var bootstrapped_ce(Var logits, const std::vector<int>& labels, double top_fraction);

/// 1 - sum(p*g) / sum(p + g - p*g) per object slot (background excluded),
/// averaged over slots present in `labels`; 0 when no object is present.
/// For one-hot g this is the min/max soft IoU.
double soft_jaccard(const Tensor& probs, const std::vector<int>& labels);
Var soft_jaccard(Var probs, const std::vector<int>& labels);

}  // namespace batman
