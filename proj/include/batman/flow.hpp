#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>

#include "batman/io.hpp"
#include "batman/rng.hpp"
#include "batman/tensor.hpp"

namespace batman {

/// Per-pixel displacement (pixels per frame), stored as [2 x H x W] with
/// channel 0 = u (horizontal) and channel 1 = v (vertical).
class FlowField {
 public:
  FlowField() = default;
  explicit FlowField(Tensor uv);
  FlowField(const Tensor& u, const Tensor& v);
  static FlowField zeros(std::size_t height, std::size_t width);

  std::size_t height() const { return uv_.dim(1); }
  std::size_t width() const { return uv_.dim(2); }
  double u(std::size_t y, std::size_t x) const { return uv_[y * width() + x]; }
  double v(std::size_t y, std::size_t x) const { return uv_[(height() + y) * width() + x]; }
  const Tensor& uv() const { return uv_; }

 private:
  Tensor uv_{{2, 0, 0}, {}};
};

/// Adds i.i.d. N(0, sigma^2) to both components.
FlowField add_flow_noise(const FlowField& flow, double sigma, Rng& rng);

/// "BFLO" | u32 height | u32 width | H*W interleaved (u, v) float32 LE, row-major.
void write_bflo(std::ostream& out, const FlowField& flow);
FlowField read_bflo(std::istream& in);
void save_bflo(const std::filesystem::path& path, const FlowField& flow);
FlowField load_bflo(const std::filesystem::path& path);

/// Middlebury colour-wheel rendering. Vectors are normalised by `max_radius`
/// (<= 0 picks the largest magnitude in the field); longer vectors are darkened.
io::RgbImage flow_to_color(const FlowField& flow, double max_radius = -1.0);

}  // namespace batman
