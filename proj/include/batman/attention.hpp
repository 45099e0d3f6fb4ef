#pragma once

// Bilateral attention: tokens attend only to keys that are spatial neighbours
// AND close in a learned scalar "bilateral" coordinate mixing appearance and
// motion. Closeness in that coordinate is measured by rank inside the
// query's spatial window, not by value.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "batman/autograd.hpp"
#include "batman/tensor.hpp"

namespace batman {

struct AttentionConfig {
  std::size_t window_radius = 7;   // W_d, in tokens
  std::size_t rank_window = 84;    // W_b, rank difference admitted
  double suppression = 1e4;        // L, score offset for rejected keys
  std::size_t num_heads = 8;
  std::size_t head_dim = 32;
  std::size_t channels = 256;

  /// (2 W_d + 1)^2 - 1: the rank window at which the rank test admits the
  /// whole spatial window.
  std::size_t max_rank_window() const;
  std::size_t window_area() const { return (2 * window_radius + 1) * (2 * window_radius + 1); }
  void validate() const;

  /// W_d = 7, W_b = 84, 8 heads.
  static AttentionConfig full_scale(std::size_t channels = 256);
  /// W_d = 2 with W_b scaled to keep the full-scale admitted fraction, 4 heads.
  static AttentionConfig toy(std::size_t channels = 64);
};

/// H x W grid of C-dim tokens stored as [frames * H * W x C], frame-major.
struct TokenGrid {
  Tensor tokens;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t area() const { return height * width; }
  std::size_t frames() const { return area() == 0 ? 0 : tokens.dim(0) / area(); }
  std::size_t channels() const { return tokens.dim(1); }
};

/// One scalar bilateral coordinate per query token, [HW x 1].
struct BilateralEncoding {
  Tensor values;
  std::size_t height = 0;
  std::size_t width = 0;

  double at(std::size_t pos) const { return values[pos]; }
};

/// Per-query admitted key positions (row-major flat indices, ascending).
class BilateralMask {
 public:
  BilateralMask() = default;
  BilateralMask(std::size_t height, std::size_t width, std::vector<std::uint32_t> offsets,
                std::vector<std::uint32_t> keys);

  /// Builds from a dense HW x HW 0/1 matrix.
  static BilateralMask from_dense(const Tensor& dense, std::size_t height, std::size_t width);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t area() const { return height_ * width_; }
  std::span<const std::uint32_t> keys(std::size_t query) const;
  std::size_t count(std::size_t query) const { return offsets_[query + 1] - offsets_[query]; }
  bool admits(std::size_t query, std::size_t key) const;
  std::size_t max_count() const;
  std::size_t total() const { return keys_.size(); }

  Tensor to_dense() const;

  /// "h w : i1,j1 i2,j2 ..." one line per query.
  void dump(std::ostream& out) const;
  /// Greyscale overlay for one query: 0 outside the spatial window, 96 inside
  /// the window but rejected, 192 admitted, 255 the query itself.
  void write_overlay_pgm(const std::filesystem::path& path, std::size_t query,
                         std::size_t window_radius, std::size_t pixel_scale = 8) const;

  bool operator==(const BilateralMask& other) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint32_t> offsets_{0};
  std::vector<std::uint32_t> keys_;
};

/// Concatenates query features and flow encoding along channels and applies
/// a 1x1 projection `proj` [1 x (C + C_f) x 1 x 1] (no bias).
BilateralEncoding encode_bilateral_space(const TokenGrid& query_feat, const TokenGrid& flow_encoding,
                                         const Tensor& proj);
Var encode_bilateral_space(Var query_tokens, Var flow_tokens, Var proj);

/// For each query, ranks E inside the query-centred spatial window (clipped at
/// the border; ascending, ties broken by row-major position) and admits the
/// window positions whose rank is within W_b of the query's own rank.
BilateralMask build_bilateral_mask(const BilateralEncoding& e, const AttentionConfig& cfg);

/// The fixed geometric window: every position within W_d (Chebyshev).
BilateralMask spatial_window_mask(std::size_t height, std::size_t width, std::size_t window_radius);

// --- single-head attention ------------------------------------------------
// Q is [HW x C]; K and V are [T*HW x C] / [T*HW x Cv] for T frames. A key at
// spatial position p of any frame is admitted iff the mask admits p. Scores are
// QK^T / sqrt(C).

/// Dense reference: full score matrix, softmax restricted to admitted keys.
Tensor bi_attn_exact(const Tensor& q, const Tensor& k, const Tensor& v, const BilateralMask& m);
/// Training form: admitted scores get + E[key position], rejected ones - L,
/// softmax over every key. `e` is [HW x 1].
Tensor bi_attn_additive(const Tensor& q, const Tensor& k, const Tensor& v, const BilateralMask& m,
                        const Tensor& e, double suppression);
/// Gathers only admitted keys. With `e` given, adds E[key position] to each
/// admitted score, which equals the additive form once exp(-L) underflows.
Tensor bi_attn_windowed(const Tensor& q, const Tensor& k, const Tensor& v, const BilateralMask& m,
                        const Tensor* e = nullptr);

/// Dense attention weights of the exact variant, [HW x T*HW]; used by audits.
Tensor bi_attn_exact_weights(const Tensor& q, const Tensor& k, const BilateralMask& m);
Tensor bi_attn_additive_weights(const Tensor& q, const Tensor& k, const BilateralMask& m,
                                const Tensor& e, double suppression);

Var bi_attn_exact(Var q, Var k, Var v, const BilateralMask& m);
Var bi_attn_additive(Var q, Var k, Var v, const BilateralMask& m, Var e, double suppression);
Var bi_attn_windowed(Var q, Var k, Var v, const BilateralMask& m, std::optional<Var> e = {});

/// Plain scaled dot-product attention over every key.
Var full_attention(Var q, Var k, Var v);

// --- multi-head -------------------------------------------------------------

enum class AttentionVariant { kExact, kAdditive, kWindowed };

/// Per-head projections W_i^Q, W_i^K, W_i^V [C x d_hidden] and W^O
/// [heads*d_hidden x C].
struct HeadProjections {
  std::vector<Tensor> query;
  std::vector<Tensor> key;
  std::vector<Tensor> value;
  Tensor output;
};

/// Every head shares the same mask (and the same E when given).
Tensor multi_head_bi_attn(const Tensor& q, const Tensor& k, const Tensor& v, const BilateralMask& m,
                          const HeadProjections& proj,
                          AttentionVariant variant = AttentionVariant::kWindowed,
                          const Tensor* e = nullptr, double suppression = 1e4);

struct HeadVars {
  std::vector<Var> query;
  std::vector<Var> key;
  std::vector<Var> value;
  Var output;
};

Var multi_head_bi_attn(Var q, Var k, Var v, const BilateralMask& m, const HeadVars& proj,
                       AttentionVariant variant = AttentionVariant::kWindowed,
                       std::optional<Var> e = {}, double suppression = 1e4);

/// Multi-head attention without a mask (global self/cross attention).
Var multi_head_full(Var q, Var k, Var v, const HeadVars& proj);

/// Splits combined [C x heads*d] projection matrices into per-head column
/// blocks on the tape.
HeadVars split_heads(Var wq, Var wk, Var wv, Var wo, std::size_t num_heads);

}  // namespace batman
