#include "batman/params.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "batman/io.hpp"

namespace batman {

void Params::add(std::string name, Tensor value) {
  if (has(name)) throw std::invalid_argument("Params: duplicate parameter " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

bool Params::has(std::string_view name) const {
  for (const auto& n : names_)
    if (n == name) return true;
  return false;
}

std::size_t Params::index(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw std::out_of_range("Params: no parameter named " + std::string(name));
}

void Params::set(std::string_view name, Tensor value) {
  const std::size_t i = index(name);
  require_shape(value, values_[i].shape(), ("Params::set " + std::string(name)).c_str());
  values_[i] = std::move(value);
}

std::size_t Params::total_numel() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.numel();
  return n;
}

Params Params::subset(std::string_view prefix) const {
  Params out;
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i].starts_with(prefix)) out.add(names_[i], values_[i]);
  return out;
}

void Params::merge(const Params& other) {
  for (std::size_t i = 0; i < other.size(); ++i) {
    if (has(other.names_[i])) {
      set(other.names_[i], other.values_[i]);
    } else {
      add(other.names_[i], other.values_[i]);
    }
  }
}

bool Params::operator==(const Params& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (!identical(values_[i], other.values_[i])) return false;
  return true;
}

BoundParams::BoundParams(Tape& tape, const Params& params, bool requires_grad)
    : tape_(&tape), params_(&params) {
  leaves_.reserve(params.size());
  for (const auto& v : params.values()) leaves_.push_back(tape.leaf(v, requires_grad));
}

BoundParams::BoundParams(Tape& tape, const Params& params, std::vector<Var> leaves)
    : tape_(&tape), params_(&params), leaves_(std::move(leaves)) {
  if (leaves_.size() != params.size()) throw std::invalid_argument("BoundParams: one leaf per parameter required");
}

Var BoundParams::operator()(std::string_view name) const { return leaves_[params_->index(name)]; }

std::vector<Tensor> BoundParams::gradients() const {
  std::vector<Tensor> out;
  out.reserve(leaves_.size());
  for (const Var& v : leaves_) out.push_back(tape_->grad(v));
  return out;
}

Tensor conv_init(std::size_t cout, std::size_t cin, std::size_t k, Rng& rng) {
  const double fan_in = static_cast<double>(cin * k * k);
  return randn({cout, cin, k, k}, rng, std::sqrt(2.0 / fan_in));
}

Tensor linear_init(std::size_t in, std::size_t out, Rng& rng) {
  return randn({in, out}, rng, std::sqrt(1.0 / static_cast<double>(in)));
}

void save_checkpoint(const std::filesystem::path& stem, const Params& params, const nlohmann::json& metadata) {
  std::filesystem::path blob = stem, manifest = stem;
  blob += ".btsr";
  manifest += ".json";
  std::ofstream out(blob, std::ios::binary);
  if (!out) throw io::FormatError("cannot open " + blob.string() + " for writing");
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    entries.push_back({{"name", params.names()[i]},
                       {"shape", params.values()[i].shape()},
                       {"offset", static_cast<std::uint64_t>(out.tellp())}});
    io::write_btsr(out, params.values()[i]);
  }
  nlohmann::json doc{{"format", "batman-checkpoint"}, {"version", 1}, {"tensors", entries},
                     {"metadata", metadata}};
  std::ofstream(manifest) << doc.dump(2) << '\n';
}

Params load_checkpoint(const std::filesystem::path& stem, nlohmann::json* metadata) {
  std::filesystem::path blob = stem, manifest = stem;
  blob += ".btsr";
  manifest += ".json";
  std::ifstream mf(manifest);
  if (!mf) throw io::FormatError("missing checkpoint manifest " + manifest.string());
  const nlohmann::json doc = nlohmann::json::parse(mf);
  std::ifstream in(blob, std::ios::binary);
  if (!in) throw io::FormatError("missing checkpoint payload " + blob.string());
  Params params;
  for (const auto& entry : doc.at("tensors")) {
    in.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    Tensor t = io::read_btsr(in);
    if (t.shape() != entry.at("shape").get<Shape>()) {
      throw io::FormatError("checkpoint tensor " + entry.at("name").get<std::string>() + " has shape " +
                            shape_str(t.shape()));
    }
    params.add(entry.at("name").get<std::string>(), std::move(t));
  }
  if (metadata) *metadata = doc.value("metadata", nlohmann::json::object());
  return params;
}

}  // namespace batman
