#include "batman/flow.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>


namespace batman {

// --- flow -------------------------------------------------------------------

FlowField::FlowField(Tensor uv) : uv_(std::move(uv)) {
  if (uv_.ndim() != 3 || uv_.dim(0) != 2) throw ShapeError("FlowField: expected [2 x H x W], got " + shape_str(uv_.shape()));
}

FlowField::FlowField(const Tensor& u, const Tensor& v) {
  require_ndim(u, 2, "FlowField u");
  require_shape(v, u.shape(), "FlowField v");
  std::vector<double> d(u.data().begin(), u.data().end());
  d.insert(d.end(), v.data().begin(), v.data().end());
  uv_ = Tensor({2, u.dim(0), u.dim(1)}, std::move(d));
}

FlowField FlowField::zeros(std::size_t height, std::size_t width) {
  return FlowField(Tensor::zeros({2, height, width}));
}

FlowField add_flow_noise(const FlowField& flow, double sigma, Rng& rng) {
  std::vector<double> d = flow.uv().to_vector();
  if (sigma > 0.0)
    for (auto& x : d) x += sigma * rng.normal();
  return FlowField(Tensor(flow.uv().shape(), std::move(d)));
}

void write_bflo(std::ostream& out, const FlowField& flow) {
  out.write("BFLO", 4);
  io::put_u32(out, static_cast<std::uint32_t>(flow.height()));
  io::put_u32(out, static_cast<std::uint32_t>(flow.width()));
  for (std::size_t y = 0; y < flow.height(); ++y) {
    for (std::size_t x = 0; x < flow.width(); ++x) {
      io::put_f32(out, static_cast<float>(flow.u(y, x)));
      io::put_f32(out, static_cast<float>(flow.v(y, x)));
    }
  }
}

FlowField read_bflo(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "BFLO", 4) != 0) throw io::FormatError("BFLO: bad magic");
  const std::size_t h = io::get_u32(in), w = io::get_u32(in);
  std::vector<double> d(2 * h * w);
  for (std::size_t p = 0; p < h * w; ++p) {
    d[p] = io::get_f32(in);
    d[h * w + p] = io::get_f32(in);
  }
  return FlowField(Tensor({2, h, w}, std::move(d)));
}

void save_bflo(const std::filesystem::path& path, const FlowField& flow) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io::FormatError("cannot open " + path.string() + " for writing");
  write_bflo(out, flow);
}

FlowField load_bflo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::FormatError("cannot open " + path.string());
  return read_bflo(in);
}

namespace {

// Hue transitions red-yellow-green-cyan-blue-magenta, lengths chosen for
// perceptual evenness.
std::vector<std::array<double, 3>> color_wheel() {
  constexpr int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
  std::vector<std::array<double, 3>> wheel;
  for (int i = 0; i < RY; ++i) wheel.push_back({255, 255.0 * i / RY, 0});
  for (int i = 0; i < YG; ++i) wheel.push_back({255 - 255.0 * i / YG, 255, 0});
  for (int i = 0; i < GC; ++i) wheel.push_back({0, 255, 255.0 * i / GC});
  for (int i = 0; i < CB; ++i) wheel.push_back({0, 255 - 255.0 * i / CB, 255});
  for (int i = 0; i < BM; ++i) wheel.push_back({255.0 * i / BM, 0, 255});
  for (int i = 0; i < MR; ++i) wheel.push_back({255, 0, 255 - 255.0 * i / MR});
  return wheel;
}

}  // namespace

io::RgbImage flow_to_color(const FlowField& flow, double max_radius) {
  static const auto wheel = color_wheel();
  const auto ncols = static_cast<double>(wheel.size());
  const std::size_t h = flow.height(), w = flow.width();
  if (max_radius <= 0.0) {
    max_radius = 0.0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) max_radius = std::max(max_radius, std::hypot(flow.u(y, x), flow.v(y, x)));
    if (max_radius == 0.0) max_radius = 1.0;
  }
  io::RgbImage img{w, h, std::vector<std::uint8_t>(w * h * 3)};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double fu = flow.u(y, x) / max_radius, fv = flow.v(y, x) / max_radius;
      const double rad = std::hypot(fu, fv);
      const double angle = std::atan2(-fv, -fu) / std::numbers::pi;
      const double fk = (angle + 1.0) / 2.0 * (ncols - 1.0);
      const auto k0 = static_cast<std::size_t>(fk);
      const std::size_t k1 = (k0 + 1) % wheel.size();
      const double f = fk - static_cast<double>(k0);
      for (std::size_t c = 0; c < 3; ++c) {
        double col = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
        col = rad <= 1.0 ? 1.0 - rad * (1.0 - col) : col * 0.75;
        img.pixels[(y * w + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(255.0 * col));
      }
    }
  }
  return img;
}

}  // namespace batman
