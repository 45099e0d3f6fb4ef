#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "batman/tensor.hpp"

namespace batman {

/// Per-pixel object ids, 0 = background.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}

  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::uint8_t max_label() const;
  /// 1.0 where the label is non-zero, as an [H x W] tensor.
  Tensor foreground() const;
  /// Nearest downscale by an integer factor, sampling the centre pixel of each cell.
  LabelMap downscale(std::size_t factor) const;

  bool operator==(const LabelMap&) const = default;
};

/// Object ids as pixel values in an 8-bit PGM.
void write_label_pgm(const std::filesystem::path& path, const LabelMap& m);
LabelMap read_label_pgm(const std::filesystem::path& path);

}  // namespace batman
