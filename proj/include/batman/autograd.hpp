#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "batman/kernels.hpp"
#include "batman/tensor.hpp"

namespace batman {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
};

/// Ordered record of executed kernels for one reverse pass.
///
/// Each recorded node keeps its output and a closure that maps the output
/// gradient to one gradient per input (an empty tensor means "no gradient").
/// Single-threaded; build one tape per step.
class Tape {
 public:
  using Backward = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var record(Tensor value, const std::vector<Var>& inputs, Backward backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar root (seed 1) or from an explicit seed.
  void backward(Var root);
  void backward(Var root, const Tensor& seed);

  /// Accumulated gradient of `v`; zeros when nothing flowed into it. Interior
  /// nodes drop their gradient once it has been propagated.
  Tensor grad(Var v) const;

  /// Inside a backward closure: whether input `input` of the node being
  /// differentiated wants a gradient.
  bool needs_grad(std::size_t input) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool requires_grad = false;
  };
  // deque keeps references returned by value() stable while recording.
  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
  const Node* current_ = nullptr;
};

/// Differentiable wrappers over batman::kernels.
namespace ag {

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var gelu(Var x);
Var add_row_bias(Var x, Var bias);
Var add_channel_bias(Var x, Var bias);
Var softmax_rows(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = kernels::kLayerNormEps);
Var conv2d(Var x, Var w, Var bias, kernels::ConvSpec spec);
Var conv2d(Var x, Var w, kernels::ConvSpec spec);
Var upsample_nearest(Var x, std::size_t factor);
Var bilinear_resize(Var x, std::size_t out_h, std::size_t out_w);
Var concat0(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice0(Var x, std::size_t begin, std::size_t end);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var chw_to_tokens(Var x);
Var tokens_to_chw(Var x, std::size_t h, std::size_t w);
Var reshape(Var x, Shape shape);
Var embedding_lookup(Var table, const std::vector<int>& ids);
Var sum(Var x);
Var mean(Var x);
/// Sum of weights[i] * terms[i] over 1-element tensors.
Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights);

}  // namespace ag
}  // namespace batman
