#include "batman/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace batman {

AdamW::AdamW(AdamWConfig cfg, const Params& params) : cfg_(cfg) {
  if (cfg.lr < 0.0 || cfg.weight_decay < 0.0 || cfg.eps <= 0.0) {
    throw std::invalid_argument("AdamW: negative learning rate / weight decay or non-positive eps");
  }
  for (const Tensor& t : params.values()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamW::step(Params& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size() || m_.size() != params.size()) {
    throw std::invalid_argument("AdamW::step: gradient count does not match parameters");
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  auto& values = params.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    require_shape(grads[i], values[i].shape(), "AdamW::step gradient");
    std::vector<double> p = values[i].to_vector();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = grads[i][j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[j] / bc1, vhat = v[j] / bc2;
      p[j] = p[j] * (1.0 - cfg_.lr * cfg_.weight_decay) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    values[i] = Tensor(values[i].shape(), std::move(p));
  }
}

Ema::Ema(double decay, const Params& init) : decay_(decay), shadow_(init) {
  if (decay < 0.0 || decay >= 1.0) throw std::invalid_argument("Ema: decay must be in [0, 1)");
}

double Ema::current_decay() const {
  const double n = static_cast<double>(updates_);
  return std::min(decay_, (1.0 + n) / (10.0 + n));
}

void Ema::update(const Params& params) {
  if (params.size() != shadow_.size()) throw std::invalid_argument("Ema::update: parameter count changed");
  const double d = current_decay();
  auto& shadow = shadow_.values();
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    const Tensor& p = params.values()[i];
    require_shape(p, shadow[i].shape(), "Ema::update");
    std::vector<double> s = shadow[i].to_vector();
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = d * s[j] + (1.0 - d) * p[j];
    shadow[i] = Tensor(shadow[i].shape(), std::move(s));
  }
  ++updates_;
}

}  // namespace batman
