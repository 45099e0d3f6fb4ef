#include "batman/calibration.hpp"

#include <cmath>

namespace batman {

namespace k = kernels;

CalibConfig CalibConfig::toy() { return CalibConfig{}; }

CalibConfig CalibConfig::eleven_layer() {
  CalibConfig cfg;
  cfg.channels = {16, 32, 64, 128, 256};
  cfg.refine_head = true;
  return cfg;
}

namespace {
std::string name(const std::string& prefix, const char* kind, std::size_t i, const char* what) {
  return prefix + kind + std::to_string(i) + "." + what;
}
}  // namespace

Params init_calibration(const CalibConfig& cfg, Rng& rng, const std::string& prefix) {
  if (cfg.channels.empty()) throw std::invalid_argument("CalibConfig: no levels");
  Params p;
  std::size_t cin = 3;
  for (std::size_t i = 0; i < cfg.depth(); ++i) {
    p.add(name(prefix, "down", i, "w"), conv_init(cfg.channels[i], cin, 3, rng));
    p.add(name(prefix, "down", i, "b"), Tensor::zeros({cfg.channels[i]}));
    cin = cfg.channels[i];
  }
  // up i merges the level below with skip i-1 (the raw input for i == 0).
  for (std::size_t i = cfg.depth(); i-- > 0;) {
    const std::size_t skip = i == 0 ? 3 : cfg.channels[i - 1];
    const bool last = i == 0 && !cfg.refine_head;
    const std::size_t cout = i == 0 ? (last ? 2 : cfg.channels[0]) : cfg.channels[i - 1];
    p.add(name(prefix, "up", i, "w"), last ? Tensor::zeros({cout, cin + skip, 3, 3}) : conv_init(cout, cin + skip, 3, rng));
    p.add(name(prefix, "up", i, "b"), Tensor::zeros({cout}));
    cin = cout;
  }
  if (cfg.refine_head) {
    p.add(prefix + "head.w", Tensor::zeros({2, cin, 3, 3}));
    p.add(prefix + "head.b", Tensor::zeros({2}));
  }
  return p;
}

Var calibrate_flow(const BoundParams& p, const CalibConfig& cfg, Var init_flow, Var prev_mask,
                   const std::string& prefix) {
  const std::size_t h = init_flow.dim(1), w = init_flow.dim(2);
  if (prev_mask.shape() != Shape{h, w}) {
    throw ShapeError("calibrate_flow: flow is " + std::to_string(h) + "x" + std::to_string(w) +
                     ", mask is " + shape_str(prev_mask.shape()));
  }
  const std::size_t scale = std::size_t{1} << cfg.depth();
  if (h % scale || w % scale) {
    throw ShapeError("calibrate_flow: extents must be divisible by " + std::to_string(scale));
  }
  const k::ConvSpec down{2, 1}, same{1, 1};
  Var x = ag::concat0({init_flow, ag::reshape(prev_mask, {1, h, w})});
  std::vector<Var> skips{x};
  Var cur = x;
  for (std::size_t i = 0; i < cfg.depth(); ++i) {
    cur = ag::gelu(ag::conv2d(cur, p(name(prefix, "down", i, "w")), p(name(prefix, "down", i, "b")), down));
    skips.push_back(cur);
  }
  for (std::size_t i = cfg.depth(); i-- > 0;) {
    cur = ag::concat0({ag::upsample_nearest(cur, 2), skips[i]});
    cur = ag::conv2d(cur, p(name(prefix, "up", i, "w")), p(name(prefix, "up", i, "b")), same);
    const bool last = i == 0 && !cfg.refine_head;
    if (!last) cur = ag::gelu(cur);
  }
  if (cfg.refine_head) cur = ag::conv2d(cur, p(prefix + "head.w"), p(prefix + "head.b"), same);
  return ag::add(init_flow, cur);
}

FlowField calibrate_flow(const FlowField& init_flow, const Tensor& prev_mask, const Params& weights,
                         const CalibConfig& cfg, const std::string& prefix) {
  Tape tape;
  BoundParams p(tape, weights, false);
  Var out = calibrate_flow(p, cfg, tape.constant(init_flow.uv()), tape.constant(prev_mask), prefix);
  return FlowField(out.value());
}

double flow_mse(const FlowField& init, const FlowField& out) {
  require_shape(out.uv(), init.uv().shape(), "flow_mse");
  double s = 0.0;
  for (std::size_t i = 0; i < init.uv().numel(); ++i) {
    const double d = out.uv()[i] - init.uv()[i];
    s += d * d;
  }
  return s / static_cast<double>(init.uv().numel());
}

Var flow_mse(Var a, Var b) {
  Var d = ag::sub(a, b);
  return ag::mean(ag::mul(d, d));
}

MaskedTotalVariation masked_total_variation(const FlowField& flow, const Tensor& mask) {
  const std::size_t h = flow.height(), w = flow.width();
  require_shape(mask, {h, w}, "masked_total_variation mask");
  MaskedTotalVariation tv;
  double sum_in[2] = {0, 0}, sum_out[2] = {0, 0};
  std::size_t n_in[2] = {0, 0}, n_out[2] = {0, 0};
  auto visit = [&](std::size_t dir, std::size_t y0, std::size_t x0, std::size_t y1, std::size_t x1) {
    const bool a = mask[y0 * w + x0] != 0.0, b = mask[y1 * w + x1] != 0.0;
    if (a != b) return;
    const double d = std::abs(flow.u(y1, x1) - flow.u(y0, x0)) + std::abs(flow.v(y1, x1) - flow.v(y0, x0));
    if (a) {
      sum_in[dir] += d;
      ++n_in[dir];
    } else {
      sum_out[dir] += d;
      ++n_out[dir];
    }
  };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x) visit(0, y, x, y, x + 1);
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x < w; ++x) visit(1, y, x, y + 1, x);
  for (std::size_t dir = 0; dir < 2; ++dir) {
    if (n_in[dir]) tv.inside += sum_in[dir] / static_cast<double>(n_in[dir]);
    if (n_out[dir]) tv.outside += sum_out[dir] / static_cast<double>(n_out[dir]);
    tv.inside_pairs += n_in[dir];
    tv.outside_pairs += n_out[dir];
  }
  return tv;
}

}  // namespace batman
