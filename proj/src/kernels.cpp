#include "batman/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "eigen_view.hpp"

namespace batman::kernels {

using detail::view;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <class F>
Tensor map2(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  return Tensor(a.shape(), std::move(out));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  view(out.data(), m, n).noalias() = view(a.raw(), m, k) * view(b.raw(), k, n);
  return Tensor({m, n}, std::move(out));
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> out(m * n);
  view(out.data(), m, n).noalias() = view(a.raw(), m, k) * view(b.raw(), n, k).transpose();
  return Tensor({m, n}, std::move(out));
}

Tensor transpose(const Tensor& a) {
  require_ndim(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return Tensor({n, m}, std::move(out));
}

PairGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dc) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require_shape(dc, {m, n}, "matmul_backward");
  std::vector<double> da(m * k), db(k * n);
  view(da.data(), m, k).noalias() = view(dc.raw(), m, n) * view(b.raw(), k, n).transpose();
  view(db.data(), k, n).noalias() = view(a.raw(), m, k).transpose() * view(dc.raw(), m, n);
  return {Tensor({m, k}, std::move(da)), Tensor({k, n}, std::move(db))};
}

PairGrads matmul_nt_backward(const Tensor& a, const Tensor& b, const Tensor& dc) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  require_shape(dc, {m, n}, "matmul_nt_backward");
  std::vector<double> da(m * k), db(n * k);
  view(da.data(), m, k).noalias() = view(dc.raw(), m, n) * view(b.raw(), n, k);
  view(db.data(), n, k).noalias() = view(dc.raw(), m, n).transpose() * view(a.raw(), m, k);
  return {Tensor({m, k}, std::move(da)), Tensor({n, k}, std::move(db))};
}

Tensor add(const Tensor& a, const Tensor& b) {
  return map2(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return map2(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return map2(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return Tensor(a.shape(), std::move(out));
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

namespace {
using ArrayMap = Eigen::Map<const Eigen::ArrayXd>;

// tanh(z) written through exp so the vectorised exp is used.
Eigen::ArrayXd gelu_tanh(const ArrayMap& v) {
  const Eigen::ArrayXd z = kGeluC * (v + kGeluA * v.cube());
  return 1.0 - 2.0 / ((2.0 * z).exp() + 1.0);
}
}  // namespace

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const ArrayMap v(x.raw(), static_cast<Eigen::Index>(x.numel()));
  Eigen::Map<Eigen::ArrayXd>(out.data(), v.size()) = 0.5 * v * (1.0 + gelu_tanh(v));
  return Tensor(x.shape(), std::move(out));
}

Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
  require_same_shape(x, dy, "gelu_backward");
  std::vector<double> out(x.numel());
  const ArrayMap v(x.raw(), static_cast<Eigen::Index>(x.numel()));
  const ArrayMap g(dy.raw(), v.size());
  const Eigen::ArrayXd t = gelu_tanh(v);
  const Eigen::ArrayXd dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
  Eigen::Map<Eigen::ArrayXd>(out.data(), v.size()) = g * (0.5 * (1.0 + t) + 0.5 * v * dt);
  return Tensor(x.shape(), std::move(out));
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_ndim(x, 2, "add_row_bias");
  const std::size_t n = x.dim(0), c = x.dim(1);
  require_shape(bias, {c}, "add_row_bias bias");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + bias[j];
  return Tensor(x.shape(), std::move(out));
}

Tensor column_sum(const Tensor& x) {
  require_ndim(x, 2, "column_sum");
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
  return Tensor({c}, std::move(out));
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_ndim(x, 3, "add_channel_bias");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  require_shape(bias, {c}, "add_channel_bias bias");
  std::vector<double> out(x.numel());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] = x[ch * hw + p] + bias[ch];
  return Tensor(x.shape(), std::move(out));
}

Tensor channel_sum(const Tensor& x) {
  require_ndim(x, 3, "channel_sum");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<double> out(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[ch] += x[ch * hw + p];
  return Tensor({c}, std::move(out));
}

Tensor softmax_rows(const Tensor& x) {
  require_ndim(x, 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.numel());
  // Eigen picks scalar or packet code per element from the destination's
  // alignment, so exp and the sum run in an Eigen-owned (aligned) buffer.
  Eigen::ArrayXd e(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.raw() + i * n;
    const double mx = *std::max_element(row, row + n);
    e = (Eigen::Map<const Eigen::ArrayXd>(row, static_cast<Eigen::Index>(n)) - mx).exp();
    Eigen::Map<Eigen::ArrayXd>(out.data() + i * n, static_cast<Eigen::Index>(n)) = e * (1.0 / e.sum());
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "softmax_rows_backward");
  const std::size_t m = y.dim(0), n = y.dim(1);
  std::vector<double> out(y.numel());
  for (std::size_t i = 0; i < m; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += y[i * n + j] * dy[i * n + j];
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = y[i * n + j] * (dy[i * n + j] - dot);
  }
  return Tensor(y.shape(), std::move(out));
}

LayerNormOut layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.ndim() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t c = x.shape().back();
  if (c == 0) throw ShapeError("layer_norm: zero channels");
  require_shape(gain, {c}, "layer_norm gain");
  require_shape(bias, {c}, "layer_norm bias");
  const std::size_t rows = x.numel() / c;
  std::vector<double> y(x.numel()), xhat(x.numel()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = x.raw() + r * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += src[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (src[j] - mean) * (src[j] - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    rstd[r] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (src[j] - mean) * inv;
      xhat[r * c + j] = h;
      y[r * c + j] = h * gain[j] + bias[j];
    }
  }
  return {Tensor(x.shape(), std::move(y)), Tensor(x.shape(), std::move(xhat)), std::move(rstd)};
}

LayerNormGrads layer_norm_backward(const LayerNormOut& fwd, const Tensor& gain, const Tensor& dy) {
  require_same_shape(fwd.y, dy, "layer_norm_backward");
  const std::size_t c = gain.numel();
  const std::size_t rows = dy.numel() / c;
  const double inv_c = 1.0 / static_cast<double>(c);
  std::vector<double> dx(dy.numel()), dgain(c, 0.0), dbias(c, 0.0);
  std::vector<double> dxhat(c);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean_d = 0.0, mean_dh = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double g = dy[r * c + j];
      const double h = fwd.xhat[r * c + j];
      dgain[j] += g * h;
      dbias[j] += g;
      dxhat[j] = g * gain[j];
      mean_d += dxhat[j];
      mean_dh += dxhat[j] * h;
    }
    mean_d *= inv_c;
    mean_dh *= inv_c;
    for (std::size_t j = 0; j < c; ++j) {
      dx[r * c + j] = fwd.rstd[r] * (dxhat[j] - mean_d - fwd.xhat[r * c + j] * mean_dh);
    }
  }
  return {Tensor(dy.shape(), std::move(dx)), Tensor({c}, std::move(dgain)),
          Tensor({c}, std::move(dbias))};
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, ConvSpec spec) {
  const auto padded = static_cast<long long>(in + 2 * spec.padding);
  const auto span = padded - static_cast<long long>(k);
  if (spec.stride == 0 || span < 0) return 0;
  return static_cast<std::size_t>(span) / spec.stride + 1;
}

namespace {

struct ConvGeometry {
  std::size_t cin, h, w, cout, k, oh, ow;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, ConvSpec spec) {
  require_ndim(x, 3, "conv2d input");
  require_ndim(w, 4, "conv2d weight");
  if (w.dim(1) != x.dim(0) || w.dim(2) != w.dim(3)) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " does not fit input " +
                     shape_str(x.shape()));
  }
  if (w.dim(2) % 2 == 0) throw ShapeError("conv2d: kernel extent must be odd");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), 0, 0};
  g.oh = conv_out_extent(g.h, g.k, spec);
  g.ow = conv_out_extent(g.w, g.k, spec);
  if (g.oh == 0 || g.ow == 0) {
    throw ShapeError("conv2d: non-positive output extent for input " + shape_str(x.shape()) +
                     " with kernel " + std::to_string(g.k) + ", stride " +
                     std::to_string(spec.stride) + ", padding " + std::to_string(spec.padding));
  }
  return g;
}

// Output columns ox whose input column ox*stride + kx - pad lies in [0, w).
std::pair<std::size_t, std::size_t> valid_cols(const ConvGeometry& g, ConvSpec spec, std::size_t kx) {
  const long long pad = static_cast<long long>(spec.padding), s = static_cast<long long>(spec.stride);
  const long long k = static_cast<long long>(kx), w = static_cast<long long>(g.w);
  long long lo = pad > k ? (pad - k + s - 1) / s : 0;
  long long hi = (w - 1 + pad - k) / s + 1;  // exclusive
  if (w - 1 + pad - k < 0) hi = 0;
  hi = std::min(hi, static_cast<long long>(g.ow));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// cols[(ci*k + ky)*k + kx][oy*ow + ox]
std::vector<double> im2col(const Tensor& x, const ConvGeometry& g, ConvSpec spec) {
  const std::size_t opix = g.oh * g.ow;
  std::vector<double> cols(g.cin * g.k * g.k * opix, 0.0);
  const auto pad = static_cast<long long>(spec.padding);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const double* plane = x.raw() + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* dst = cols.data() + ((ci * g.k + ky) * g.k + kx) * opix;
        const auto [lo, hi] = valid_cols(g, spec, kx);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long long iy = static_cast<long long>(oy * spec.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long long>(g.h)) continue;
          const double* src = plane + iy * static_cast<long long>(g.w) + static_cast<long long>(kx) - pad;
          double* d = dst + oy * g.ow;
          for (std::size_t ox = lo; ox < hi; ++ox) d[ox] = src[ox * spec.stride];
        }
      }
    }
  }
  return cols;
}

std::vector<double> col2im(const std::vector<double>& cols, const ConvGeometry& g, ConvSpec spec) {
  const std::size_t opix = g.oh * g.ow;
  std::vector<double> img(g.cin * g.h * g.w, 0.0);
  const auto pad = static_cast<long long>(spec.padding);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    double* plane = img.data() + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* src = cols.data() + ((ci * g.k + ky) * g.k + kx) * opix;
        const auto [lo, hi] = valid_cols(g, spec, kx);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long long iy = static_cast<long long>(oy * spec.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long long>(g.h)) continue;
          double* d = plane + iy * static_cast<long long>(g.w) + static_cast<long long>(kx) - pad;
          const double* sr = src + oy * g.ow;
          for (std::size_t ox = lo; ox < hi; ++ox) d[ox * spec.stride] += sr[ox];
        }
      }
    }
  }
  return img;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, ConvSpec spec) {
  const ConvGeometry g = conv_geometry(x, w, spec);
  const std::size_t opix = g.oh * g.ow, kk = g.cin * g.k * g.k;
  std::vector<double> out(g.cout * opix);
  if (g.k == 1 && spec.stride == 1 && spec.padding == 0) {
    view(out.data(), g.cout, opix).noalias() = view(w.raw(), g.cout, kk) * view(x.raw(), kk, opix);
  } else {
    const std::vector<double> cols = im2col(x, g, spec);
    view(out.data(), g.cout, opix).noalias() =
        view(w.raw(), g.cout, kk) * view(cols.data(), kk, opix);
  }
  if (bias.numel() != 0) {
    require_shape(bias, {g.cout}, "conv2d bias");
    for (std::size_t co = 0; co < g.cout; ++co)
      for (std::size_t p = 0; p < opix; ++p) out[co * opix + p] += bias[co];
  }
  return Tensor({g.cout, g.oh, g.ow}, std::move(out));
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, ConvSpec spec, const Tensor& dy, bool need_dx) {
  const ConvGeometry g = conv_geometry(x, w, spec);
  require_shape(dy, {g.cout, g.oh, g.ow}, "conv2d_backward");
  const std::size_t opix = g.oh * g.ow, kk = g.cin * g.k * g.k;
  std::vector<double> dw(g.cout * kk);
  const bool pointwise = g.k == 1 && spec.stride == 1 && spec.padding == 0;
  if (pointwise) {
    view(dw.data(), g.cout, kk).noalias() =
        view(dy.raw(), g.cout, opix) * view(x.raw(), kk, opix).transpose();
  } else {
    const std::vector<double> cols = im2col(x, g, spec);
    view(dw.data(), g.cout, kk).noalias() =
        view(dy.raw(), g.cout, opix) * view(cols.data(), kk, opix).transpose();
  }
  if (!need_dx) return {Tensor(), Tensor(w.shape(), std::move(dw)), channel_sum(dy)};
  std::vector<double> dcols(kk * opix);
  view(dcols.data(), kk, opix).noalias() =
      view(w.raw(), g.cout, kk).transpose() * view(dy.raw(), g.cout, opix);
  std::vector<double> dx = pointwise ? std::move(dcols) : col2im(dcols, g, spec);
  return {Tensor(x.shape(), std::move(dx)), Tensor(w.shape(), std::move(dw)), channel_sum(dy)};
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  require_ndim(x, 3, "upsample_nearest");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h * factor, ow = w * factor;
  std::vector<double> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        out[(ch * oh + y) * ow + xx] = x[(ch * h + y / factor) * w + xx / factor];
  return Tensor({c, oh, ow}, std::move(out));
}

Tensor upsample_nearest_backward(const Tensor& dy, std::size_t factor) {
  require_ndim(dy, 3, "upsample_nearest_backward");
  const std::size_t c = dy.dim(0), oh = dy.dim(1), ow = dy.dim(2);
  const std::size_t h = oh / factor, w = ow / factor;
  std::vector<double> out(c * h * w, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        out[(ch * h + y / factor) * w + xx / factor] += dy[(ch * oh + y) * ow + xx];
  return Tensor({c, h, w}, std::move(out));
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;  // weight of `hi`
};

std::vector<Tap> linear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[d] = {lo, hi, hi == lo ? 0.0 : src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_ndim(x, 3, "bilinear_resize");
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: zero output extent");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto ty = linear_taps(h, out_h);
  const auto tx = linear_taps(w, out_w);
  std::vector<double> out(c * out_h * out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = x.raw() + ch * h * w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t xx = 0; xx < out_w; ++xx) {
        const Tap& b = tx[xx];
        const double top = plane[a.lo * w + b.lo] * (1.0 - b.frac) + plane[a.lo * w + b.hi] * b.frac;
        const double bot = plane[a.hi * w + b.lo] * (1.0 - b.frac) + plane[a.hi * w + b.hi] * b.frac;
        out[(ch * out_h + y) * out_w + xx] = top * (1.0 - a.frac) + bot * a.frac;
      }
    }
  }
  return Tensor({c, out_h, out_w}, std::move(out));
}

Tensor bilinear_resize_backward(const Tensor& dy, std::size_t in_h, std::size_t in_w) {
  require_ndim(dy, 3, "bilinear_resize_backward");
  const std::size_t c = dy.dim(0), out_h = dy.dim(1), out_w = dy.dim(2);
  const auto ty = linear_taps(in_h, out_h);
  const auto tx = linear_taps(in_w, out_w);
  std::vector<double> out(c * in_h * in_w, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double* plane = out.data() + ch * in_h * in_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t xx = 0; xx < out_w; ++xx) {
        const Tap& b = tx[xx];
        const double g = dy[(ch * out_h + y) * out_w + xx];
        plane[a.lo * in_w + b.lo] += g * (1.0 - a.frac) * (1.0 - b.frac);
        plane[a.lo * in_w + b.hi] += g * (1.0 - a.frac) * b.frac;
        plane[a.hi * in_w + b.lo] += g * a.frac * (1.0 - b.frac);
        plane[a.hi * in_w + b.hi] += g * a.frac * b.frac;
      }
    }
  }
  return Tensor({c, in_h, in_w}, std::move(out));
}

Tensor concat0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat0: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.ndim() != tail.size() + 1 || !std::equal(tail.begin(), tail.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat0: trailing extents differ: " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return Tensor(std::move(shape), std::move(out));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_ndim(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.dim(1);
  }
  std::vector<double> out(rows * cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.raw() + r * pc, pc, out.data() + r * cols + off);
    off += pc;
  }
  return Tensor({rows, cols}, std::move(out));
}

Tensor slice0(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.ndim() == 0 || begin > end || end > x.dim(0)) {
    throw ShapeError("slice0: bad range for " + shape_str(x.shape()));
  }
  const std::size_t inner = x.dim(0) == 0 ? 0 : x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<double> out(x.raw() + begin * inner, x.raw() + end * inner);
  return Tensor(std::move(shape), std::move(out));
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_ndim(x, 2, "slice_cols");
  if (begin > end || end > x.dim(1)) throw ShapeError("slice_cols: bad range");
  const std::size_t rows = x.dim(0), cols = x.dim(1), n = end - begin;
  std::vector<double> out(rows * n);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.raw() + r * cols + begin, n, out.data() + r * n);
  return Tensor({rows, n}, std::move(out));
}

Tensor pad_cols(const Tensor& block, std::size_t begin, std::size_t total_cols) {
  require_ndim(block, 2, "pad_cols");
  const std::size_t rows = block.dim(0), n = block.dim(1);
  std::vector<double> out(rows * total_cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(block.raw() + r * n, n, out.data() + r * total_cols + begin);
  return Tensor({rows, total_cols}, std::move(out));
}

Tensor chw_to_tokens(const Tensor& x) {
  require_ndim(x, 3, "chw_to_tokens");
  return transpose(x.reshape({x.dim(0), x.dim(1) * x.dim(2)}));
}

Tensor tokens_to_chw(const Tensor& tokens, std::size_t h, std::size_t w) {
  require_ndim(tokens, 2, "tokens_to_chw");
  if (tokens.dim(0) != h * w) {
    throw ShapeError("tokens_to_chw: " + shape_str(tokens.shape()) + " is not " +
                     std::to_string(h) + "x" + std::to_string(w) + " tokens");
  }
  const std::size_t c = tokens.dim(1);
  return transpose(tokens).reshape({c, h, w});
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  require_ndim(table, 2, "embedding_lookup");
  const std::size_t slots = table.dim(0), c = table.dim(1);
  std::vector<double> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= slots) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) + " outside [0, " +
                              std::to_string(slots) + ")");
    }
    std::copy_n(table.raw() + static_cast<std::size_t>(ids[i]) * c, c, out.data() + i * c);
  }
  return Tensor({ids.size(), c}, std::move(out));
}

Tensor embedding_backward(const Tensor& dy, const std::vector<int>& ids, std::size_t slots) {
  const std::size_t c = dy.dim(1);
  std::vector<double> out(slots * c, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < c; ++j) out[static_cast<std::size_t>(ids[i]) * c + j] += dy[i * c + j];
  return Tensor({slots, c}, std::move(out));
}

double sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return s;
}

}  // namespace batman::kernels
