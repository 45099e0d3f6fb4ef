#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "batman/tensor.hpp"

namespace batman::io {

/// Binary tensor snapshot ("BTSR"):
///   magic "BTSR" | version u8 | dtype u8 | ndim u8 | shape: ndim x u32 LE | payload LE
/// dtype 1 stores float32, dtype 2 stores float64. Reading always yields doubles.
enum class DType : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };
inline constexpr std::uint8_t kBtsrVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_btsr(std::ostream& out, const Tensor& t, DType dtype = DType::kFloat64);
Tensor read_btsr(std::istream& in);
void save_btsr(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::kFloat64);
Tensor load_btsr(const std::filesystem::path& path);

/// 8-bit greyscale image, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

/// 8-bit interleaved RGB image, row-major.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

void write_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RgbImage& img);
RgbImage read_ppm(const std::filesystem::path& path);

// Little-endian primitives shared by the binary formats.
void put_u32(std::ostream& out, std::uint32_t v);
std::uint32_t get_u32(std::istream& in);
void put_f32(std::ostream& out, float v);
float get_f32(std::istream& in);
void put_f64(std::ostream& out, double v);
double get_f64(std::istream& in);

}  // namespace batman::io
