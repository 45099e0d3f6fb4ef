#include "batman/autograd.hpp"

#include <memory>
#include <stdexcept>

namespace batman {

namespace k = kernels;

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  Node node{std::move(value), {}, nullptr, false};
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape != this) throw std::logic_error("Tape::record: input belongs to another tape");
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

void Tape::backward(Var root) {
  if (value(root).numel() != 1) {
    throw ShapeError("Tape::backward: root must be scalar, got " + shape_str(value(root).shape()));
  }
  backward(root, Tensor::full(value(root).shape(), 1.0));
}

void Tape::backward(Var root, const Tensor& seed) {
  require_shape(seed, value(root).shape(), "Tape::backward seed");
  grads_.assign(nodes_.size(), Tensor());
  grads_[root.id] = seed;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (grads_[id].numel() == 0 || !node.backward) continue;
    current_ = &node;
    std::vector<Tensor> in_grads = node.backward(grads_[id]);
    current_ = nullptr;
    for (std::size_t i = 0; i < node.inputs.size() && i < in_grads.size(); ++i) {
      const std::size_t src = node.inputs[i];
      Tensor& gi = in_grads[i];
      if (!nodes_[src].requires_grad || gi.numel() == 0) continue;
      const Shape& shape = nodes_[src].value.shape();
      if (gi.numel() != nodes_[src].value.numel()) {
        throw std::logic_error("Tape::backward: gradient of size " + std::to_string(gi.numel()) +
                               " for input of shape " + shape_str(shape));
      }
      Tensor& acc = grads_[src];
      if (acc.numel() == 0) {
        acc = gi.shape() == shape ? std::move(gi) : gi.reshape(shape);
      } else {
        std::vector<double> total = acc.to_vector();
        for (std::size_t j = 0; j < total.size(); ++j) total[j] += gi[j];
        acc = Tensor(shape, std::move(total));
      }
    }
    // Interior gradients are dead once propagated.
    if (id != root.id && !node.inputs.empty()) grads_[id] = Tensor();
  }
}

bool Tape::needs_grad(std::size_t input) const {
  if (current_ == nullptr || input >= current_->inputs.size()) return true;
  return nodes_[current_->inputs[input]].requires_grad;
}

Tensor Tape::grad(Var v) const {
  if (v.id < grads_.size() && grads_[v.id].numel() != 0) return grads_[v.id];
  return Tensor::zeros(value(v).shape());
}

namespace ag {

namespace {
Tape& tape_of(Var v) {
  if (v.tape == nullptr) throw std::logic_error("Var without tape");
  return *v.tape;
}
}  // namespace

Var matmul(Var a, Var b) {
  Tensor av = a.value(), bv = b.value();
  return tape_of(a).record(k::matmul(av, bv), {a, b}, [av, bv](const Tensor& g) {
    auto r = k::matmul_backward(av, bv, g);
    return std::vector<Tensor>{r.da, r.db};
  });
}

Var matmul_nt(Var a, Var b) {
  Tensor av = a.value(), bv = b.value();
  return tape_of(a).record(k::matmul_nt(av, bv), {a, b}, [av, bv](const Tensor& g) {
    auto r = k::matmul_nt_backward(av, bv, g);
    return std::vector<Tensor>{r.da, r.db};
  });
}

Var transpose(Var a) {
  return tape_of(a).record(k::transpose(a.value()), {a}, [](const Tensor& g) {
    return std::vector<Tensor>{k::transpose(g)};
  });
}

Var add(Var a, Var b) {
  return tape_of(a).record(k::add(a.value(), b.value()), {a, b}, [](const Tensor& g) {
    return std::vector<Tensor>{g, g};
  });
}

Var sub(Var a, Var b) {
  return tape_of(a).record(k::sub(a.value(), b.value()), {a, b}, [](const Tensor& g) {
    return std::vector<Tensor>{g, k::scale(g, -1.0)};
  });
}

Var mul(Var a, Var b) {
  Tensor av = a.value(), bv = b.value();
  return tape_of(a).record(k::mul(av, bv), {a, b}, [av, bv](const Tensor& g) {
    return std::vector<Tensor>{k::mul(g, bv), k::mul(g, av)};
  });
}

Var scale(Var a, double s) {
  return tape_of(a).record(k::scale(a.value(), s), {a}, [s](const Tensor& g) {
    return std::vector<Tensor>{k::scale(g, s)};
  });
}

Var gelu(Var x) {
  Tensor xv = x.value();
  return tape_of(x).record(k::gelu(xv), {x}, [xv](const Tensor& g) {
    return std::vector<Tensor>{k::gelu_backward(xv, g)};
  });
}

Var add_row_bias(Var x, Var bias) {
  return tape_of(x).record(k::add_row_bias(x.value(), bias.value()), {x, bias},
                           [](const Tensor& g) {
                             return std::vector<Tensor>{g, k::column_sum(g)};
                           });
}

Var add_channel_bias(Var x, Var bias) {
  return tape_of(x).record(k::add_channel_bias(x.value(), bias.value()), {x, bias},
                           [](const Tensor& g) {
                             return std::vector<Tensor>{g, k::channel_sum(g)};
                           });
}

Var softmax_rows(Var x) {
  Tensor y = k::softmax_rows(x.value());
  return tape_of(x).record(y, {x}, [y](const Tensor& g) {
    return std::vector<Tensor>{k::softmax_rows_backward(y, g)};
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  auto fwd = std::make_shared<k::LayerNormOut>(k::layer_norm(x.value(), gain.value(), bias.value(), eps));
  Tensor gv = gain.value();
  return tape_of(x).record(fwd->y, {x, gain, bias}, [fwd, gv](const Tensor& g) {
    auto r = k::layer_norm_backward(*fwd, gv, g);
    return std::vector<Tensor>{r.dx, r.dgain, r.dbias};
  });
}

Var conv2d(Var x, Var w, Var bias, k::ConvSpec spec) {
  Tensor xv = x.value(), wv = w.value();
  Tape* tape = &tape_of(x);
  return tape->record(k::conv2d(xv, wv, bias.value(), spec), {x, w, bias},
                           [xv, wv, spec, tape](const Tensor& g) {
                             auto r = k::conv2d_backward(xv, wv, spec, g, tape->needs_grad(0));
                             return std::vector<Tensor>{r.dx, r.dw, r.dbias};
                           });
}

Var conv2d(Var x, Var w, k::ConvSpec spec) {
  Tensor xv = x.value(), wv = w.value();
  Tape* tape = &tape_of(x);
  return tape->record(k::conv2d(xv, wv, Tensor(), spec), {x, w},
                           [xv, wv, spec, tape](const Tensor& g) {
                             auto r = k::conv2d_backward(xv, wv, spec, g, tape->needs_grad(0));
                             return std::vector<Tensor>{r.dx, r.dw};
                           });
}

Var upsample_nearest(Var x, std::size_t factor) {
  return tape_of(x).record(k::upsample_nearest(x.value(), factor), {x}, [factor](const Tensor& g) {
    return std::vector<Tensor>{k::upsample_nearest_backward(g, factor)};
  });
}

Var bilinear_resize(Var x, std::size_t out_h, std::size_t out_w) {
  const std::size_t h = x.dim(1), w = x.dim(2);
  return tape_of(x).record(k::bilinear_resize(x.value(), out_h, out_w), {x},
                           [h, w](const Tensor& g) {
                             return std::vector<Tensor>{k::bilinear_resize_backward(g, h, w)};
                           });
}

Var concat0(const std::vector<Var>& parts) {
  std::vector<Tensor> values;
  std::vector<std::size_t> rows;
  for (const Var& p : parts) {
    values.push_back(p.value());
    rows.push_back(p.dim(0));
  }
  return tape_of(parts.at(0)).record(k::concat0(values), parts, [rows](const Tensor& g) {
    std::vector<Tensor> out;
    std::size_t off = 0;
    for (std::size_t r : rows) {
      out.push_back(k::slice0(g, off, off + r));
      off += r;
    }
    return out;
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  std::vector<Tensor> values;
  std::vector<std::size_t> cols;
  for (const Var& p : parts) {
    values.push_back(p.value());
    cols.push_back(p.dim(1));
  }
  return tape_of(parts.at(0)).record(k::concat_cols(values), parts, [cols](const Tensor& g) {
    std::vector<Tensor> out;
    std::size_t off = 0;
    for (std::size_t c : cols) {
      out.push_back(k::slice_cols(g, off, off + c));
      off += c;
    }
    return out;
  });
}

Var slice0(Var x, std::size_t begin, std::size_t end) {
  const Shape shape = x.shape();
  return tape_of(x).record(k::slice0(x.value(), begin, end), {x}, [shape, begin](const Tensor& g) {
    std::vector<double> full(shape_numel(shape), 0.0);
    const std::size_t inner = g.dim(0) == 0 ? 0 : g.numel() / g.dim(0);
    std::copy(g.data().begin(), g.data().end(), full.begin() + static_cast<long>(begin * inner));
    return std::vector<Tensor>{Tensor(shape, std::move(full))};
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const std::size_t total = x.dim(1);
  return tape_of(x).record(k::slice_cols(x.value(), begin, end), {x},
                           [begin, total](const Tensor& g) {
                             return std::vector<Tensor>{k::pad_cols(g, begin, total)};
                           });
}

Var chw_to_tokens(Var x) {
  const std::size_t h = x.dim(1), w = x.dim(2);
  return tape_of(x).record(k::chw_to_tokens(x.value()), {x}, [h, w](const Tensor& g) {
    return std::vector<Tensor>{k::tokens_to_chw(g, h, w)};
  });
}

Var tokens_to_chw(Var x, std::size_t h, std::size_t w) {
  return tape_of(x).record(k::tokens_to_chw(x.value(), h, w), {x}, [](const Tensor& g) {
    return std::vector<Tensor>{k::chw_to_tokens(g)};
  });
}

Var reshape(Var x, Shape shape) {
  const Shape original = x.shape();
  return tape_of(x).record(x.value().reshape(std::move(shape)), {x}, [original](const Tensor& g) {
    return std::vector<Tensor>{g.reshape(original)};
  });
}

Var embedding_lookup(Var table, const std::vector<int>& ids) {
  const std::size_t slots = table.dim(0);
  return tape_of(table).record(k::embedding_lookup(table.value(), ids), {table},
                               [ids, slots](const Tensor& g) {
                                 return std::vector<Tensor>{k::embedding_backward(g, ids, slots)};
                               });
}

Var sum(Var x) {
  const Shape shape = x.shape();
  return tape_of(x).record(Tensor::scalar(k::sum(x.value())), {x}, [shape](const Tensor& g) {
    return std::vector<Tensor>{Tensor::full(shape, g[0])};
  });
}

Var mean(Var x) {
  const Shape shape = x.shape();
  const double n = static_cast<double>(x.value().numel());
  return tape_of(x).record(Tensor::scalar(k::sum(x.value()) / n), {x}, [shape, n](const Tensor& g) {
    return std::vector<Tensor>{Tensor::full(shape, g[0] / n)};
  });
}

Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights) {
  if (terms.size() != weights.size() || terms.empty()) {
    throw std::invalid_argument("weighted_sum: terms and weights differ in length");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) total += weights[i] * terms[i].value().item();
  return tape_of(terms[0]).record(Tensor::scalar(total), terms, [weights](const Tensor& g) {
    std::vector<Tensor> out;
    for (double w : weights) out.push_back(Tensor::scalar(g[0] * w));
    return out;
  });
}

}  // namespace ag
}  // namespace batman
