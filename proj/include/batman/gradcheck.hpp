#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "batman/autograd.hpp"

namespace batman {

/// Builds a scalar on the tape from leaves holding the checked inputs.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor: err = |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded sample per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
  bool finite = true;
  std::string message;

  bool passed(double tol) const { return finite && max_rel_error < tol; }
};

/// Central-difference check of the reverse-mode gradient of `f`.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace batman

namespace batman {

struct GradCheckCase {
  std::string name;
  ScalarFn f;
  std::vector<Tensor> inputs;
  GradCheckOptions options;
};

/// One case per differentiable operation (tensor kernels, attention
/// variants, losses, calibration network) with inputs drawn from `seed`.
/// Each output is reduced against a fixed random tensor so no gradient is
/// trivially uniform.
std::vector<GradCheckCase> operation_gradcheck_cases(std::uint64_t seed);

/// Training loss of a one-block toy model on a 32x32 synthetic sample, with
/// every parameter tensor as an input (sampled coordinates).
GradCheckCase model_gradcheck_case(std::uint64_t seed, std::size_t coords_per_tensor = 2);

}  // namespace batman
