#include "batman/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "batman/rng.hpp"

namespace batman {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t, false));
  return f(tape, leaves).value().item();
}

std::vector<std::size_t> pick_coords(std::size_t n, const GradCheckOptions& opt, std::size_t input) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (opt.max_coords_per_input == 0 || n <= opt.max_coords_per_input) return idx;
  Rng rng(derive_seed(opt.sample_seed, input));
  for (std::size_t i = 0; i < opt.max_coords_per_input; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(n - 1)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(opt.max_coords_per_input);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options) {
  GradCheckResult result;
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
  Var out = f(tape, leaves);
  tape.backward(out);

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor analytic = tape.grad(leaves[i]);
    for (std::size_t c : pick_coords(inputs[i].numel(), options, i)) {
      const double a = analytic[c];
      if (!std::isfinite(a)) {
        result.finite = false;
        result.worst_input = i;
        result.worst_index = c;
        result.message = "non-finite analytic gradient at input " + std::to_string(i) +
                         ", coordinate " + std::to_string(c);
        return result;
      }
      std::vector<Tensor> shifted = inputs;
      std::vector<double> buf = inputs[i].to_vector();
      const double x0 = buf[c];
      buf[c] = x0 + options.step;
      shifted[i] = Tensor(inputs[i].shape(), buf);
      const double fp = evaluate(f, shifted);
      buf[c] = x0 - options.step;
      shifted[i] = Tensor(inputs[i].shape(), buf);
      const double fm = evaluate(f, shifted);
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.coords_checked;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : INFINITY;
        result.worst_input = i;
        result.worst_index = c;
      }
    }
  }
  return result;
}

}  // namespace batman
