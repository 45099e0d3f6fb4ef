#include "batman/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "batman/io.hpp"
#include "batman/parallel.hpp"
#include "eigen_view.hpp"

namespace batman {

namespace k = kernels;
using detail::view;

// --- config ---------------------------------------------------------------

std::size_t AttentionConfig::max_rank_window() const { return window_area() - 1; }

void AttentionConfig::validate() const {
  if (num_heads == 0 || head_dim == 0) throw std::invalid_argument("AttentionConfig: zero heads or head_dim");
  if (channels != num_heads * head_dim) {
    throw std::invalid_argument("AttentionConfig: channels " + std::to_string(channels) +
                                " != num_heads * head_dim = " + std::to_string(num_heads * head_dim));
  }
  if (rank_window > max_rank_window()) {
    throw std::invalid_argument("AttentionConfig: W_b " + std::to_string(rank_window) +
                                " exceeds (2W_d+1)^2-1 = " + std::to_string(max_rank_window()));
  }
  if (!(suppression > 0.0)) throw std::invalid_argument("AttentionConfig: L must be positive");
}

AttentionConfig AttentionConfig::full_scale(std::size_t channels) {
  AttentionConfig cfg;
  cfg.window_radius = 7;
  cfg.rank_window = 84;
  cfg.num_heads = 8;
  cfg.channels = channels;
  cfg.head_dim = channels / 8;
  return cfg;
}

AttentionConfig AttentionConfig::toy(std::size_t channels) {
  AttentionConfig cfg;
  cfg.window_radius = 2;
  cfg.rank_window = (84 * cfg.window_area()) / 225;  // floor(84/225 * 25) = 9
  cfg.num_heads = 4;
  cfg.channels = channels;
  cfg.head_dim = channels / 4;
  return cfg;
}

// --- mask -----------------------------------------------------------------

BilateralMask::BilateralMask(std::size_t height, std::size_t width, std::vector<std::uint32_t> offsets,
                             std::vector<std::uint32_t> keys)
    : height_(height), width_(width), offsets_(std::move(offsets)), keys_(std::move(keys)) {
  if (offsets_.size() != height_ * width_ + 1 || offsets_.back() != keys_.size()) {
    throw std::invalid_argument("BilateralMask: inconsistent offsets");
  }
}

BilateralMask BilateralMask::from_dense(const Tensor& dense, std::size_t height, std::size_t width) {
  const std::size_t n = height * width;
  require_shape(dense, {n, n}, "BilateralMask::from_dense");
  std::vector<std::uint32_t> offsets{0}, keys;
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t p = 0; p < n; ++p)
      if (dense[q * n + p] != 0.0) keys.push_back(static_cast<std::uint32_t>(p));
    offsets.push_back(static_cast<std::uint32_t>(keys.size()));
  }
  return BilateralMask(height, width, std::move(offsets), std::move(keys));
}

std::span<const std::uint32_t> BilateralMask::keys(std::size_t query) const {
  return {keys_.data() + offsets_[query], offsets_[query + 1] - offsets_[query]};
}

bool BilateralMask::admits(std::size_t query, std::size_t key) const {
  const auto row = keys(query);
  return std::binary_search(row.begin(), row.end(), static_cast<std::uint32_t>(key));
}

std::size_t BilateralMask::max_count() const {
  std::size_t m = 0;
  for (std::size_t q = 0; q < area(); ++q) m = std::max(m, count(q));
  return m;
}

Tensor BilateralMask::to_dense() const {
  const std::size_t n = area();
  std::vector<double> d(n * n, 0.0);
  for (std::size_t q = 0; q < n; ++q)
    for (auto p : keys(q)) d[q * n + p] = 1.0;
  return Tensor({n, n}, std::move(d));
}

void BilateralMask::dump(std::ostream& out) const {
  for (std::size_t q = 0; q < area(); ++q) {
    out << q / width_ << ' ' << q % width_ << " :";
    for (auto p : keys(q)) out << ' ' << p / width_ << ',' << p % width_;
    out << '\n';
  }
}

void BilateralMask::write_overlay_pgm(const std::filesystem::path& path, std::size_t query,
                                      std::size_t window_radius, std::size_t pixel_scale) const {
  if (query >= area()) throw std::out_of_range("write_overlay_pgm: query outside grid");
  const std::size_t qh = query / width_, qw = query % width_;
  io::GrayImage img;
  img.width = width_ * pixel_scale;
  img.height = height_ * pixel_scale;
  img.pixels.assign(img.width * img.height, 0);
  for (std::size_t p = 0; p < area(); ++p) {
    const std::size_t ph = p / width_, pw = p % width_;
    const std::size_t dh = ph > qh ? ph - qh : qh - ph;
    const std::size_t dw = pw > qw ? pw - qw : qw - pw;
    std::uint8_t level = 0;
    if (p == query) {
      level = 255;
    } else if (admits(query, p)) {
      level = 192;
    } else if (dh <= window_radius && dw <= window_radius) {
      level = 96;
    }
    for (std::size_t y = 0; y < pixel_scale; ++y)
      for (std::size_t x = 0; x < pixel_scale; ++x)
        img.pixels[(ph * pixel_scale + y) * img.width + pw * pixel_scale + x] = level;
  }
  io::write_pgm(path, img);
}

// --- bilateral encoding ---------------------------------------------------

BilateralEncoding encode_bilateral_space(const TokenGrid& query_feat, const TokenGrid& flow_encoding,
                                         const Tensor& proj) {
  if (query_feat.height != flow_encoding.height || query_feat.width != flow_encoding.width ||
      query_feat.tokens.dim(0) != flow_encoding.tokens.dim(0)) {
    throw ShapeError("encode_bilateral_space: grid " + std::to_string(query_feat.height) + "x" +
                     std::to_string(query_feat.width) + " vs flow grid " +
                     std::to_string(flow_encoding.height) + "x" + std::to_string(flow_encoding.width));
  }
  Tape tape;
  Var e = encode_bilateral_space(tape.constant(query_feat.tokens), tape.constant(flow_encoding.tokens),
                                 tape.constant(proj));
  return {e.value(), query_feat.height, query_feat.width};
}

Var encode_bilateral_space(Var query_tokens, Var flow_tokens, Var proj) {
  const std::size_t cin = query_tokens.dim(1) + flow_tokens.dim(1);
  if (query_tokens.dim(0) != flow_tokens.dim(0)) {
    throw ShapeError("encode_bilateral_space: token counts differ " + shape_str(query_tokens.shape()) +
                     " vs " + shape_str(flow_tokens.shape()));
  }
  require_shape(proj.value(), {1, cin, 1, 1}, "encode_bilateral_space projection");
  Var joint = ag::concat_cols({query_tokens, flow_tokens});
  // A 1x1 convolution on a token matrix is a matrix-vector product.
  return ag::matmul(joint, ag::reshape(proj, {cin, 1}));
}

// --- mask construction ----------------------------------------------------

BilateralMask build_bilateral_mask(const BilateralEncoding& e, const AttentionConfig& cfg) {
  const std::size_t h = e.height, w = e.width, n = h * w;
  require_shape(e.values, {n, 1}, "build_bilateral_mask encoding");
  if (!e.values.all_finite()) throw NonFiniteError("build_bilateral_mask: non-finite encoding");
  const auto r = static_cast<long long>(cfg.window_radius);
  const auto wb = static_cast<long long>(cfg.rank_window);

  std::vector<std::vector<std::uint32_t>> rows(n);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    std::vector<std::uint32_t> window;
    std::vector<long long> rank_of;
    for (std::size_t q = begin; q < end; ++q) {
      const auto qh = static_cast<long long>(q / w), qw = static_cast<long long>(q % w);
      const long long r0 = std::max(0LL, qh - r), r1 = std::min<long long>(h - 1, qh + r);
      const long long c0 = std::max(0LL, qw - r), c1 = std::min<long long>(w - 1, qw + r);
      window.clear();
      for (long long i = r0; i <= r1; ++i)
        for (long long j = c0; j <= c1; ++j) window.push_back(static_cast<std::uint32_t>(i * w + j));
      // `window` is row-major, so a stable sort breaks value ties by position.
      std::vector<std::uint32_t> sorted = window;
      std::stable_sort(sorted.begin(), sorted.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return e.at(a) < e.at(b); });
      rank_of.assign(window.size(), 0);
      long long query_rank = 0;
      for (std::size_t rk = 0; rk < sorted.size(); ++rk) {
        const auto it = std::lower_bound(window.begin(), window.end(), sorted[rk]);
        rank_of[static_cast<std::size_t>(it - window.begin())] = static_cast<long long>(rk);
        if (sorted[rk] == q) query_rank = static_cast<long long>(rk);
      }
      auto& out = rows[q];
      for (std::size_t idx = 0; idx < window.size(); ++idx) {
        if (std::llabs(rank_of[idx] - query_rank) <= wb) out.push_back(window[idx]);
      }
    }
  });

  std::vector<std::uint32_t> offsets{0}, keys;
  for (const auto& row : rows) {
    keys.insert(keys.end(), row.begin(), row.end());
    offsets.push_back(static_cast<std::uint32_t>(keys.size()));
  }
  return BilateralMask(h, w, std::move(offsets), std::move(keys));
}

BilateralMask spatial_window_mask(std::size_t height, std::size_t width, std::size_t window_radius) {
  std::vector<std::uint32_t> offsets{0}, keys;
  for (std::size_t qh = 0; qh < height; ++qh) {
    for (std::size_t qw = 0; qw < width; ++qw) {
      for (std::size_t i = 0; i < height; ++i) {
        for (std::size_t j = 0; j < width; ++j) {
          const std::size_t dh = i > qh ? i - qh : qh - i;
          const std::size_t dw = j > qw ? j - qw : qw - j;
          if (dh <= window_radius && dw <= window_radius) keys.push_back(static_cast<std::uint32_t>(i * width + j));
        }
      }
      offsets.push_back(static_cast<std::uint32_t>(keys.size()));
    }
  }
  return BilateralMask(height, width, std::move(offsets), std::move(keys));
}

// --- single-head kernels ----------------------------------------------------

namespace {

struct Dims {
  std::size_t n;       // query tokens (HW)
  std::size_t frames;  // T
  std::size_t c;       // query/key channels
  std::size_t cv;      // value channels
  double inv_sqrt;
};

Dims check_qkv(const Tensor& q, const Tensor& kt, const Tensor& v, const BilateralMask& m) {
  require_ndim(q, 2, "bilateral attention Q");
  require_ndim(kt, 2, "bilateral attention K");
  require_ndim(v, 2, "bilateral attention V");
  const std::size_t n = m.area();
  if (q.dim(0) != n) {
    throw ShapeError("bilateral attention: Q has " + std::to_string(q.dim(0)) + " tokens, mask grid has " +
                     std::to_string(n));
  }
  if (kt.dim(1) != q.dim(1)) throw ShapeError("bilateral attention: Q/K channel mismatch");
  if (kt.dim(0) != v.dim(0) || kt.dim(0) == 0 || kt.dim(0) % n != 0) {
    throw ShapeError("bilateral attention: K " + shape_str(kt.shape()) + " / V " + shape_str(v.shape()) +
                     " are not whole frames of " + std::to_string(n) + " tokens");
  }
  return {n, kt.dim(0) / n, q.dim(1), v.dim(1), 1.0 / std::sqrt(static_cast<double>(q.dim(1)))};
}

void require_nonempty_rows(const BilateralMask& m) {
  for (std::size_t qi = 0; qi < m.area(); ++qi) {
    if (m.count(qi) == 0) {
      throw std::invalid_argument("bilateral attention: query " + std::to_string(qi) + " admits no keys");
    }
  }
}

// Dense probabilities for the exact variant: softmax over admitted keys only.
Tensor exact_probs(const Tensor& q, const Tensor& kt, const BilateralMask& m, const Dims& d) {
  require_nonempty_rows(m);
  const std::size_t keys = d.frames * d.n;
  const Tensor scores = k::matmul_nt(q, kt);
  std::vector<double> p(d.n * keys, 0.0);
  parallel_for(d.n, [&](std::size_t begin, std::size_t end) {
    std::vector<char> allowed(d.n);
    for (std::size_t r = begin; r < end; ++r) {
      std::fill(allowed.begin(), allowed.end(), 0);
      for (auto pos : m.keys(r)) allowed[pos] = 1;
      const double* s = scores.raw() + r * keys;
      double* dst = p.data() + r * keys;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < keys; ++j)
        if (allowed[j % d.n]) mx = std::max(mx, s[j] * d.inv_sqrt);
      double total = 0.0;
      for (std::size_t j = 0; j < keys; ++j) {
        if (!allowed[j % d.n]) continue;
        dst[j] = std::exp(s[j] * d.inv_sqrt - mx);
        total += dst[j];
      }
      for (std::size_t j = 0; j < keys; ++j) dst[j] /= total;
    }
  });
  return Tensor({d.n, keys}, std::move(p));
}

Tensor additive_probs(const Tensor& q, const Tensor& kt, const BilateralMask& m, const Tensor& e,
                      double suppression, const Dims& d) {
  require_shape(e, {d.n, 1}, "bi_attn_additive encoding");
  const std::size_t keys = d.frames * d.n;
  const Tensor scores = k::matmul_nt(q, kt);
  std::vector<double> biased(d.n * keys);
  parallel_for(d.n, [&](std::size_t begin, std::size_t end) {
    std::vector<char> allowed(d.n);
    for (std::size_t r = begin; r < end; ++r) {
      std::fill(allowed.begin(), allowed.end(), 0);
      for (auto pos : m.keys(r)) allowed[pos] = 1;
      for (std::size_t j = 0; j < keys; ++j) {
        const double s = scores[r * keys + j] * d.inv_sqrt;
        biased[r * keys + j] = allowed[j % d.n] ? s + e[j % d.n] : s - suppression;
      }
    }
  });
  return k::softmax_rows(Tensor({d.n, keys}, std::move(biased)));
}

struct DenseGrads {
  Tensor dq, dk, dv, de;
};

// Shared reverse rule for out = P V with P a row softmax (masked entries of P
// are zero and stay zero in dS).
DenseGrads dense_backward(const Tensor& q, const Tensor& kt, const Tensor& v, const Tensor& p,
                          const Tensor& g, const Dims& d) {
  const Tensor dp = k::matmul_nt(g, v);
  const Tensor dv = k::matmul(k::transpose(p), g);
  const Tensor ds = k::softmax_rows_backward(p, dp);
  const Tensor dq = k::scale(k::matmul(ds, kt), d.inv_sqrt);
  const Tensor dk = k::scale(k::matmul(k::transpose(ds), q), d.inv_sqrt);
  return {dq, dk, dv, Tensor()};
}

// Row-streaming dense evaluation: every key is scored, the mask row decides
// which ones enter the softmax. O(HW) memory per row, O((HW)^2) time.
Tensor exact_streaming(const Tensor& q, const Tensor& kt, const Tensor& v, const BilateralMask& m,
                       const Dims& d) {
  require_nonempty_rows(m);
  const std::size_t keys = d.frames * d.n;
  // Query rows are scored in blocks so each pass over K serves several rows.
  constexpr std::size_t kBlock = 32;
  const std::size_t blocks = (d.n + kBlock - 1) / kBlock;
  std::vector<double> out(d.n * d.cv, 0.0);
  parallel_for(blocks, [&](std::size_t begin, std::size_t end) {
    std::vector<char> allowed(d.n);
    std::vector<double> scores(kBlock * keys);
    for (std::size_t b = begin; b < end; ++b) {
      const std::size_t r0 = b * kBlock, rows = std::min(kBlock, d.n - r0);
      view(scores.data(), rows, keys).noalias() =
          view(q.raw() + r0 * d.c, rows, d.c) * view(kt.raw(), keys, d.c).transpose();
      for (std::size_t r = r0; r < r0 + rows; ++r) {
        double* s = scores.data() + (r - r0) * keys;
        std::fill(allowed.begin(), allowed.end(), 0);
        for (auto pos : m.keys(r)) allowed[pos] = 1;
        double mx = -INFINITY;
        for (std::size_t f = 0; f < d.frames; ++f) {
          double* sf = s + f * d.n;
          for (std::size_t j = 0; j < d.n; ++j) {
            sf[j] *= d.inv_sqrt;
            if (allowed[j]) mx = std::max(mx, sf[j]);
          }
        }
        double total = 0.0;
        for (std::size_t f = 0; f < d.frames; ++f) {
          double* sf = s + f * d.n;
          for (std::size_t j = 0; j < d.n; ++j) {
            sf[j] = allowed[j] ? std::exp(sf[j] - mx) : 0.0;
            total += sf[j];
          }
        }
        const double inv = 1.0 / total;
        for (std::size_t j = 0; j < keys; ++j) s[j] *= inv;
      }
      // Dense product: rejected keys take part with weight zero.
      view(out.data() + r0 * d.cv, rows, d.cv).noalias() =
          view(scores.data(), rows, keys) * view(v.raw(), keys, d.cv);
    }
  });
  return Tensor({d.n, d.cv}, std::move(out));
}

Tensor additive_e_grad(const Tensor& p, const Tensor& g, const Tensor& v, const BilateralMask& m,
                       const Dims& d) {
  const Tensor dp = k::matmul_nt(g, v);
  const Tensor ds = k::softmax_rows_backward(p, dp);
  const std::size_t keys = d.frames * d.n;
  std::vector<double> de(d.n, 0.0);
  for (std::size_t r = 0; r < d.n; ++r)
    for (std::size_t f = 0; f < d.frames; ++f)
      for (auto pos : m.keys(r)) de[pos] += ds[r * keys + f * d.n + pos];
  return Tensor({d.n, 1}, std::move(de));
}

// Windowed kernel. Candidates of query r are (frame f, admitted position p)
// in frame-major order; probabilities live at offset frames * offsets[r].
struct WindowedResult {
  Tensor out;
  std::vector<double> probs;
};

WindowedResult windowed_forward(const Tensor& q, const Tensor& kt, const Tensor& v,
                                const BilateralMask& m, const Tensor* e, const Dims& d) {
  require_nonempty_rows(m);
  if (e) require_shape(*e, {d.n, 1}, "bi_attn_windowed encoding");
  std::vector<double> out(d.n * d.cv, 0.0);
  std::vector<double> probs(m.total() * d.frames);
  std::vector<std::size_t> base(d.n);
  for (std::size_t r = 0, acc = 0; r < d.n; ++r) {
    base[r] = acc;
    acc += m.count(r) * d.frames;
  }
  parallel_for(d.n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const auto row = m.keys(r);
      double* pr = probs.data() + base[r];
      const double* qr = q.raw() + r * d.c;
      double mx = -INFINITY;
      std::size_t j = 0;
      for (std::size_t f = 0; f < d.frames; ++f) {
        for (auto pos : row) {
          const double* kr = kt.raw() + (f * d.n + pos) * d.c;
          double s = 0.0;
          for (std::size_t c = 0; c < d.c; ++c) s += qr[c] * kr[c];
          s *= d.inv_sqrt;
          if (e) s += (*e)[pos];
          pr[j++] = s;
          mx = std::max(mx, s);
        }
      }
      double total = 0.0;
      for (std::size_t t = 0; t < j; ++t) {
        pr[t] = std::exp(pr[t] - mx);
        total += pr[t];
      }
      const double inv = 1.0 / total;
      double* o = out.data() + r * d.cv;
      j = 0;
      for (std::size_t f = 0; f < d.frames; ++f) {
        for (auto pos : row) {
          pr[j] *= inv;
          const double* vr = v.raw() + (f * d.n + pos) * d.cv;
          for (std::size_t c = 0; c < d.cv; ++c) o[c] += pr[j] * vr[c];
          ++j;
        }
      }
    }
  });
  return {Tensor({d.n, d.cv}, std::move(out)), std::move(probs)};
}

DenseGrads windowed_backward(const Tensor& q, const Tensor& kt, const Tensor& v, const BilateralMask& m,
                             const std::vector<double>& probs, const Tensor& g, const Dims& d,
                             bool want_e) {
  std::vector<double> dq(d.n * d.c, 0.0), dk(kt.numel(), 0.0), dv(v.numel(), 0.0), de(d.n, 0.0);
  std::vector<double> dp;
  std::size_t base = 0;
  for (std::size_t r = 0; r < d.n; ++r) {
    const auto row = m.keys(r);
    const std::size_t cnt = row.size() * d.frames;
    const double* pr = probs.data() + base;
    const double* gr = g.raw() + r * d.cv;
    dp.assign(cnt, 0.0);
    double dot = 0.0;
    std::size_t j = 0;
    for (std::size_t f = 0; f < d.frames; ++f) {
      for (auto pos : row) {
        const std::size_t key = f * d.n + pos;
        const double* vr = v.raw() + key * d.cv;
        double s = 0.0;
        for (std::size_t c = 0; c < d.cv; ++c) s += gr[c] * vr[c];
        dp[j] = s;
        dot += pr[j] * s;
        double* dvr = dv.data() + key * d.cv;
        for (std::size_t c = 0; c < d.cv; ++c) dvr[c] += pr[j] * gr[c];
        ++j;
      }
    }
    const double* qr = q.raw() + r * d.c;
    double* dqr = dq.data() + r * d.c;
    j = 0;
    for (std::size_t f = 0; f < d.frames; ++f) {
      for (auto pos : row) {
        const std::size_t key = f * d.n + pos;
        const double ds = pr[j] * (dp[j] - dot);
        de[pos] += ds;
        const double* kr = kt.raw() + key * d.c;
        double* dkr = dk.data() + key * d.c;
        for (std::size_t c = 0; c < d.c; ++c) {
          dqr[c] += ds * d.inv_sqrt * kr[c];
          dkr[c] += ds * d.inv_sqrt * qr[c];
        }
        ++j;
      }
    }
    base += cnt;
  }
  DenseGrads out{Tensor(q.shape(), std::move(dq)), Tensor(kt.shape(), std::move(dk)),
                 Tensor(v.shape(), std::move(dv)), Tensor()};
  if (want_e) out.de = Tensor({d.n, 1}, std::move(de));
  return out;
}

}  // namespace

Tensor bi_attn_exact_weights(const Tensor& q, const Tensor& kt, const BilateralMask& m) {
  const Dims d = check_qkv(q, kt, kt, m);
  return exact_probs(q, kt, m, d);
}

Tensor bi_attn_additive_weights(const Tensor& q, const Tensor& kt, const BilateralMask& m, const Tensor& e,
                                double suppression) {
  const Dims d = check_qkv(q, kt, kt, m);
  return additive_probs(q, kt, m, e, suppression, d);
}

Tensor bi_attn_exact(const Tensor& q, const Tensor& kt, const Tensor& v, const BilateralMask& m) {
  const Dims d = check_qkv(q, kt, v, m);
  return exact_streaming(q, kt, v, m, d);
}

Tensor bi_attn_additive(const Tensor& q, const Tensor& kt, const Tensor& v, const BilateralMask& m,
                        const Tensor& e, double suppression) {
  const Dims d = check_qkv(q, kt, v, m);
  return k::matmul(additive_probs(q, kt, m, e, suppression, d), v);
}

Tensor bi_attn_windowed(const Tensor& q, const Tensor& kt, const Tensor& v, const BilateralMask& m,
                        const Tensor* e) {
  const Dims d = check_qkv(q, kt, v, m);
  return windowed_forward(q, kt, v, m, e, d).out;
}

Var bi_attn_exact(Var q, Var kv, Var v, const BilateralMask& m) {
  const Tensor qt = q.value(), kt = kv.value(), vt = v.value();
  const Dims d = check_qkv(qt, kt, vt, m);
  const Tensor p = exact_probs(qt, kt, m, d);
  return q.tape->record(k::matmul(p, vt), {q, kv, v}, [qt, kt, vt, p, d](const Tensor& g) {
    auto r = dense_backward(qt, kt, vt, p, g, d);
    return std::vector<Tensor>{r.dq, r.dk, r.dv};
  });
}

Var bi_attn_additive(Var q, Var kv, Var v, const BilateralMask& m, Var e, double suppression) {
  const Tensor qt = q.value(), kt = kv.value(), vt = v.value();
  const Dims d = check_qkv(qt, kt, vt, m);
  const Tensor p = additive_probs(qt, kt, m, e.value(), suppression, d);
  auto mask = std::make_shared<BilateralMask>(m);
  return q.tape->record(k::matmul(p, vt), {q, kv, v, e}, [qt, kt, vt, p, d, mask](const Tensor& g) {
    auto r = dense_backward(qt, kt, vt, p, g, d);
    return std::vector<Tensor>{r.dq, r.dk, r.dv, additive_e_grad(p, g, vt, *mask, d)};
  });
}

Var bi_attn_windowed(Var q, Var kv, Var v, const BilateralMask& m, std::optional<Var> e) {
  const Tensor qt = q.value(), kt = kv.value(), vt = v.value();
  const Dims d = check_qkv(qt, kt, vt, m);
  Tensor et = e ? e->value() : Tensor();
  auto fwd = std::make_shared<WindowedResult>(windowed_forward(qt, kt, vt, m, e ? &et : nullptr, d));
  auto mask = std::make_shared<BilateralMask>(m);
  std::vector<Var> inputs{q, kv, v};
  if (e) inputs.push_back(*e);
  const bool want_e = e.has_value();
  Tensor out = fwd->out;
  return q.tape->record(std::move(out), inputs, [qt, kt, vt, fwd, mask, d, want_e](const Tensor& g) {
    auto r = windowed_backward(qt, kt, vt, *mask, fwd->probs, g, d, want_e);
    std::vector<Tensor> grads{r.dq, r.dk, r.dv};
    if (want_e) grads.push_back(r.de);
    return grads;
  });
}

Var full_attention(Var q, Var kv, Var v) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Var p = ag::softmax_rows(ag::scale(ag::matmul_nt(q, kv), inv));
  return ag::matmul(p, v);
}

// --- multi-head -------------------------------------------------------------

namespace {

void check_heads(const HeadVars& proj, std::size_t c) {
  const std::size_t h = proj.query.size();
  if (h == 0 || proj.key.size() != h || proj.value.size() != h) {
    throw ShapeError("multi-head attention: projection lists differ in length");
  }
  std::size_t total = 0;
  for (std::size_t i = 0; i < h; ++i) {
    const Shape& s = proj.query[i].shape();
    if (s.size() != 2 || s[0] != c || proj.key[i].shape() != s || proj.value[i].shape().size() != 2 ||
        proj.value[i].dim(0) != c) {
      throw ShapeError("multi-head attention: head " + std::to_string(i) + " projection " + shape_str(s) +
                       " does not map " + std::to_string(c) + " channels");
    }
    total += proj.value[i].dim(1);
  }
  if (proj.output.shape().size() != 2 || proj.output.dim(0) != total) {
    throw ShapeError("multi-head attention: output projection " + shape_str(proj.output.shape()) +
                     " expects " + std::to_string(total) + " input rows");
  }
}

template <class HeadFn>
Var run_heads(Var q, Var kv, Var v, const HeadVars& proj, HeadFn head) {
  check_heads(proj, q.dim(1));
  std::vector<Var> heads;
  for (std::size_t i = 0; i < proj.query.size(); ++i) {
    heads.push_back(head(ag::matmul(q, proj.query[i]), ag::matmul(kv, proj.key[i]),
                         ag::matmul(v, proj.value[i])));
  }
  Var joined = heads.size() == 1 ? heads[0] : ag::concat_cols(heads);
  return ag::matmul(joined, proj.output);
}

}  // namespace

Var multi_head_bi_attn(Var q, Var kv, Var v, const BilateralMask& m, const HeadVars& proj,
                       AttentionVariant variant, std::optional<Var> e, double suppression) {
  return run_heads(q, kv, v, proj, [&](Var qh, Var kh, Var vh) {
    switch (variant) {
      case AttentionVariant::kExact:
        return bi_attn_exact(qh, kh, vh, m);
      case AttentionVariant::kAdditive:
        if (!e) throw std::invalid_argument("additive bilateral attention needs an encoding");
        return bi_attn_additive(qh, kh, vh, m, *e, suppression);
      case AttentionVariant::kWindowed:
        break;
    }
    return bi_attn_windowed(qh, kh, vh, m, e);
  });
}

Var multi_head_full(Var q, Var kv, Var v, const HeadVars& proj) {
  return run_heads(q, kv, v, proj, [](Var qh, Var kh, Var vh) { return full_attention(qh, kh, vh); });
}

Tensor multi_head_bi_attn(const Tensor& q, const Tensor& kt, const Tensor& v, const BilateralMask& m,
                          const HeadProjections& proj, AttentionVariant variant, const Tensor* e,
                          double suppression) {
  Tape tape;
  HeadVars hv;
  for (const auto& w : proj.query) hv.query.push_back(tape.constant(w));
  for (const auto& w : proj.key) hv.key.push_back(tape.constant(w));
  for (const auto& w : proj.value) hv.value.push_back(tape.constant(w));
  hv.output = tape.constant(proj.output);
  std::optional<Var> ev;
  if (e) ev = tape.constant(*e);
  return multi_head_bi_attn(tape.constant(q), tape.constant(kt), tape.constant(v), m, hv, variant, ev,
                            suppression)
      .value();
}

HeadVars split_heads(Var wq, Var wk, Var wv, Var wo, std::size_t num_heads) {
  const std::size_t total = wq.dim(1);
  if (num_heads == 0 || total % num_heads != 0) {
    throw ShapeError("split_heads: " + std::to_string(total) + " columns do not split into " +
                     std::to_string(num_heads) + " heads");
  }
  const std::size_t d = total / num_heads;
  HeadVars hv;
  for (std::size_t h = 0; h < num_heads; ++h) {
    if (num_heads == 1) {
      hv.query.push_back(wq);
      hv.key.push_back(wk);
      hv.value.push_back(wv);
    } else {
      hv.query.push_back(ag::slice_cols(wq, h * d, (h + 1) * d));
      hv.key.push_back(ag::slice_cols(wk, h * d, (h + 1) * d));
      hv.value.push_back(ag::slice_cols(wv, h * d, (h + 1) * d));
    }
  }
  hv.output = wo;
  return hv;
}

}  // namespace batman
