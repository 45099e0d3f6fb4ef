#include "batman/label_map.hpp"

#include <algorithm>

#include "batman/io.hpp"

namespace batman {

std::uint8_t LabelMap::max_label() const {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
}

Tensor LabelMap::foreground() const {
  std::vector<double> d(labels.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = labels[i] != 0 ? 1.0 : 0.0;
  return Tensor({height, width}, std::move(d));
}

LabelMap LabelMap::downscale(std::size_t factor) const {
  if (factor == 0 || height % factor || width % factor) {
    throw ShapeError("LabelMap::downscale: " + std::to_string(height) + "x" + std::to_string(width) +
                     " not divisible by " + std::to_string(factor));
  }
  LabelMap out(height / factor, width / factor);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) out.at(y, x) = at(y * factor + factor / 2, x * factor + factor / 2);
  return out;
}

void write_label_pgm(const std::filesystem::path& path, const LabelMap& m) {
  io::write_pgm(path, io::GrayImage{m.width, m.height, m.labels});
}

LabelMap read_label_pgm(const std::filesystem::path& path) {
  io::GrayImage img = io::read_pgm(path);
  LabelMap m;
  m.height = img.height;
  m.width = img.width;
  m.labels = std::move(img.pixels);
  return m;
}

}  // namespace batman
