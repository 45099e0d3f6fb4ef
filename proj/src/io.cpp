#include "batman/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace batman::io {

namespace {

void need(std::istream& in, const char* what) {
  if (!in) throw FormatError(std::string("truncated stream while reading ") + what);
}

template <class UInt>
void put_le(std::ostream& out, UInt v) {
  char bytes[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(UInt));
}

template <class UInt>
UInt get_le(std::istream& in) {
  unsigned char bytes[sizeof(UInt)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(UInt));
  need(in, "little-endian word");
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void put_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
std::uint32_t get_u32(std::istream& in) { return get_le<std::uint32_t>(in); }
void put_f32(std::ostream& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }
float get_f32(std::istream& in) { return std::bit_cast<float>(get_le<std::uint32_t>(in)); }
void put_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

void write_btsr(std::ostream& out, const Tensor& t, DType dtype) {
  if (t.ndim() > 255) throw FormatError("BTSR: rank above 255");
  out.write("BTSR", 4);
  out.put(static_cast<char>(kBtsrVersion));
  out.put(static_cast<char>(dtype));
  out.put(static_cast<char>(t.ndim()));
  for (std::size_t s : t.shape()) {
    if (s > 0xFFFFFFFFu) throw FormatError("BTSR: extent exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(s));
  }
  for (double v : t.data()) {
    if (dtype == DType::kFloat32) {
      put_f32(out, static_cast<float>(v));
    } else {
      put_f64(out, v);
    }
  }
}

Tensor read_btsr(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  need(in, "BTSR magic");
  if (std::memcmp(magic, "BTSR", 4) != 0) throw FormatError("BTSR: bad magic");
  const int version = in.get();
  const int dtype = in.get();
  const int ndim = in.get();
  need(in, "BTSR header");
  if (version != kBtsrVersion) throw FormatError("BTSR: unsupported version " + std::to_string(version));
  if (dtype != 1 && dtype != 2) throw FormatError("BTSR: unknown dtype code " + std::to_string(dtype));
  Shape shape(static_cast<std::size_t>(ndim));
  for (auto& s : shape) s = get_u32(in);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = dtype == 1 ? static_cast<double>(get_f32(in)) : get_f64(in);
  return Tensor(std::move(shape), std::move(data));
}

void save_btsr(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_btsr(out, t, dtype);
}

Tensor load_btsr(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_btsr(in);
}

namespace {

void write_netpbm(const std::filesystem::path& path, const char* magic, std::size_t w,
                  std::size_t h, const std::vector<std::uint8_t>& px) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << magic << '\n' << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

std::string next_token(std::istream& in) {
  std::string tok;
  while (in) {
    const int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  in >> tok;
  return tok;
}

std::vector<std::uint8_t> read_netpbm(const std::filesystem::path& path, const char* magic,
                                      std::size_t channels, std::size_t& w, std::size_t& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  if (next_token(in) != magic) throw FormatError(path.string() + ": expected " + magic);
  w = std::stoul(next_token(in));
  h = std::stoul(next_token(in));
  if (std::stoul(next_token(in)) != 255) throw FormatError(path.string() + ": only maxval 255");
  in.get();
  std::vector<std::uint8_t> px(w * h * channels);
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  need(in, "image payload");
  return px;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  write_netpbm(path, "P5", img.width, img.height, img.pixels);
}

GrayImage read_pgm(const std::filesystem::path& path) {
  GrayImage img;
  img.pixels = read_netpbm(path, "P5", 1, img.width, img.height);
  return img;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  write_netpbm(path, "P6", img.width, img.height, img.pixels);
}

RgbImage read_ppm(const std::filesystem::path& path) {
  RgbImage img;
  img.pixels = read_netpbm(path, "P6", 3, img.width, img.height);
  return img;
}

}  // namespace batman::io
