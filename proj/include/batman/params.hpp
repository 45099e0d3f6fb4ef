#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "batman/autograd.hpp"
#include "batman/rng.hpp"
#include "batman/tensor.hpp"

namespace batman {

/// Named parameter tensors in insertion order.
class Params {
 public:
  void add(std::string name, Tensor value);
  bool has(std::string_view name) const;
  std::size_t index(std::string_view name) const;
  const Tensor& get(std::string_view name) const { return values_[index(name)]; }
  void set(std::string_view name, Tensor value);

  std::size_t size() const { return values_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor>& values() const { return values_; }
  std::vector<Tensor>& values() { return values_; }
  std::size_t total_numel() const;

  /// Parameters whose name starts with `prefix`.
  Params subset(std::string_view prefix) const;
  /// Adds (or overwrites) every entry of `other`.
  void merge(const Params& other);

  bool operator==(const Params& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// Parameters placed on a tape as leaves.
class BoundParams {
 public:
  BoundParams(Tape& tape, const Params& params, bool requires_grad);
  /// Binds existing leaves, one per parameter in order.
  BoundParams(Tape& tape, const Params& params, std::vector<Var> leaves);
  Var operator()(std::string_view name) const;
  Tape& tape() const { return *tape_; }
  /// Gradients after tape.backward(), aligned with the parameter order.
  std::vector<Tensor> gradients() const;

 private:
  Tape* tape_;
  const Params* params_;
  std::vector<Var> leaves_;
};

// Initialisers.
Tensor conv_init(std::size_t cout, std::size_t cin, std::size_t k, Rng& rng);
Tensor linear_init(std::size_t in, std::size_t out, Rng& rng);

/// Checkpoint = `<stem>.btsr` (tensors concatenated in manifest order) plus
/// `<stem>.json` (manifest: names, shapes, byte offsets, free-form metadata).
void save_checkpoint(const std::filesystem::path& stem, const Params& params,
                     const nlohmann::json& metadata = nlohmann::json::object());
Params load_checkpoint(const std::filesystem::path& stem, nlohmann::json* metadata = nullptr);

}  // namespace batman
