#pragma once

#include <cstddef>
#include <vector>

#include "batman/params.hpp"

namespace batman {

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.07;
};

/// Decoupled weight decay: p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
class AdamW {
 public:
  AdamW(AdamWConfig cfg, const Params& params);
  void step(Params& params, const std::vector<Tensor>& grads);
  std::size_t steps() const { return steps_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Shadow weights s <- d s + (1 - d) p with d = min(decay, (1 + n) / (10 + n))
/// after n previous updates, so early shadows are not dominated by the init.
class Ema {
 public:
  Ema(double decay, const Params& init);
  void update(const Params& params);
  const Params& shadow() const { return shadow_; }
  std::size_t updates() const { return updates_; }
  double current_decay() const;

 private:
  double decay_;
  std::size_t updates_ = 0;
  Params shadow_;
};

}  // namespace batman
