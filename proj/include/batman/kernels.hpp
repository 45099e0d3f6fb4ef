#pragma once

// Forward kernels and their reverse-mode rules. Every function here is pure:
// inputs are read-only tensors, outputs are fresh tensors. The autograd tape
// (autograd.hpp) strings these together; tests call them directly.

#include <cstddef>
#include <vector>

#include "batman/tensor.hpp"

namespace batman::kernels {

inline constexpr double kLayerNormEps = 1e-5;

// --- linear algebra -------------------------------------------------------

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m x k] . [n x k]^T -> [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

struct PairGrads {
  Tensor da;
  Tensor db;
};
PairGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dc);
PairGrads matmul_nt_backward(const Tensor& a, const Tensor& b, const Tensor& dc);

// --- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& x, const Tensor& dy);

// --- the two broadcasts the model needs -----------------------------------

/// x [N x C] + bias [C] on every row.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
/// Sum over rows of [N x C] -> [C].
Tensor column_sum(const Tensor& x);
/// x [C x H x W] + bias [C] on every pixel.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
/// Sum over pixels of [C x H x W] -> [C].
Tensor channel_sum(const Tensor& x);

// --- normalisation --------------------------------------------------------

Tensor softmax_rows(const Tensor& x);
Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy);

struct LayerNormOut {
  Tensor y;
  Tensor xhat;
  std::vector<double> rstd;
};
/// Normalises over the last axis, then applies gain and bias.
LayerNormOut layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                        double eps = kLayerNormEps);
struct LayerNormGrads {
  Tensor dx;
  Tensor dgain;
  Tensor dbias;
};
LayerNormGrads layer_norm_backward(const LayerNormOut& fwd, const Tensor& gain, const Tensor& dy);

// --- convolution and resampling ------------------------------------------

struct ConvSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation of x [Cin x H x W] with w [Cout x Cin x k x k], zero
/// padding. `bias` may be empty (numel 0).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, ConvSpec spec);
struct ConvGrads {
  Tensor dx;
  Tensor dw;
  Tensor dbias;
};
/// `dx` is left empty when `need_dx` is false.
ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, ConvSpec spec, const Tensor& dy,
                          bool need_dx = true);
std::size_t conv_out_extent(std::size_t in, std::size_t k, ConvSpec spec);

/// Integer-factor nearest upsampling of [C x H x W].
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
Tensor upsample_nearest_backward(const Tensor& dy, std::size_t factor);

/// Bilinear resize of [C x H x W] using the half-pixel (align_corners=false)
/// convention: source coordinate = (dst + 0.5) * in/out - 0.5, clamped at 0
/// and at the last pixel.
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor bilinear_resize_backward(const Tensor& dy, std::size_t in_h, std::size_t in_w);

// --- layout ---------------------------------------------------------------

/// Concatenate along axis 0; trailing extents must agree.
Tensor concat0(const std::vector<Tensor>& parts);
/// Concatenate 2-D tensors along axis 1.
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice0(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
/// Scatter a column block back into a zero [rows x total_cols] tensor.
Tensor pad_cols(const Tensor& block, std::size_t begin, std::size_t total_cols);

/// [C x H x W] -> [HW x C] token matrix.
Tensor chw_to_tokens(const Tensor& x);
/// [HW x C] -> [C x H x W].
Tensor tokens_to_chw(const Tensor& tokens, std::size_t h, std::size_t w);

/// Rows of table [S x C] selected by ids -> [N x C].
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor embedding_backward(const Tensor& dy, const std::vector<int>& ids, std::size_t slots);

double sum(const Tensor& x);

}  // namespace batman::kernels
