#pragma once

// Naive reference implementations used only by tests. They share no code
// with the library beyond the Tensor container.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "batman/label_map.hpp"
#include "batman/tensor.hpp"

namespace oracle {

using batman::Tensor;

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a.at(i, t) * b.at(t, j);
      c[i * n + j] = s;
    }
  return Tensor({m, n}, std::move(c));
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad) {
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(cout * oh * ow, 0.0);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double s = bias.numel() ? bias[co] : 0.0;
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
              s += x[(ci * h + iy) * wd + ix] * w[((co * cin + ci) * k + ky) * k + kx];
            }
        out[(co * oh + oy) * ow + ox] = s;
      }
  return Tensor({cout, oh, ow}, std::move(out));
}

/// Admission by direct evaluation of the rule: key (i,j) is admitted for
/// query (h,w) iff it lies in the clipped Chebyshev window of radius wd and
/// its rank of E inside that window differs from the query's rank by at most
/// wb. Ranks ascend with E; ties go to the smaller row-major index.
inline std::vector<std::vector<int>> bilateral_mask_dense(const std::vector<double>& e, std::size_t height,
                                                          std::size_t width, std::size_t wd, std::size_t wb) {
  const std::size_t n = height * width;
  std::vector<std::vector<int>> m(n, std::vector<int>(n, 0));
  for (std::size_t qh = 0; qh < height; ++qh)
    for (std::size_t qw = 0; qw < width; ++qw) {
      const std::size_t q = qh * width + qw;
      std::vector<std::size_t> window;
      for (std::size_t i = 0; i < height; ++i)
        for (std::size_t j = 0; j < width; ++j) {
          const long di = static_cast<long>(i) - static_cast<long>(qh);
          const long dj = static_cast<long>(j) - static_cast<long>(qw);
          if (std::labs(di) <= static_cast<long>(wd) && std::labs(dj) <= static_cast<long>(wd))
            window.push_back(i * width + j);
        }
      auto rank_of = [&](std::size_t p) {
        std::size_t r = 0;
        for (std::size_t o : window)
          if (e[o] < e[p] || (e[o] == e[p] && o < p)) ++r;
        return r;
      };
      const std::size_t rq = rank_of(q);
      for (std::size_t p : window) {
        const std::size_t rp = rank_of(p);
        const std::size_t diff = rp > rq ? rp - rq : rq - rp;
        if (diff <= wb) m[q][p] = 1;
      }
    }
  return m;
}

/// Masked attention over T frames of keys, computed row by row from the full
/// score matrix: softmax over admitted keys only.
inline Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                               const std::vector<std::vector<int>>& mask) {
  const std::size_t n = q.dim(0), c = q.dim(1), keys = k.dim(0), cv = v.dim(1);
  std::vector<double> out(n * cv, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> s(keys, 0.0);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < keys; ++j) {
      double d = 0.0;
      for (std::size_t t = 0; t < c; ++t) d += q.at(r, t) * k.at(j, t);
      s[j] = d / std::sqrt(static_cast<double>(c));
      if (mask[r][j % n]) mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < keys; ++j) {
      s[j] = mask[r][j % n] ? std::exp(s[j] - mx) : 0.0;
      z += s[j];
    }
    for (std::size_t j = 0; j < keys; ++j)
      for (std::size_t t = 0; t < cv; ++t) out[r * cv + t] += s[j] / z * v.at(j, t);
  }
  return Tensor({n, cv}, std::move(out));
}

/// Boundary pixels: inside the object with a 4-neighbour (inside the image)
/// outside it.
inline std::vector<std::pair<int, int>> boundary_pixels(const batman::LabelMap& m, int id) {
  std::vector<std::pair<int, int>> out;
  const int h = static_cast<int>(m.height), w = static_cast<int>(m.width);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (m.at(y, x) != id) continue;
      const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
      bool edge = false;
      for (int d = 0; d < 4; ++d) {
        const int ny = y + dy[d], nx = x + dx[d];
        if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
        edge = edge || m.at(ny, nx) != id;
      }
      if (edge) out.emplace_back(y, x);
    }
  return out;
}

/// F-measure by exhaustive Chebyshev distances between boundary pixel sets.
inline double boundary_f(const batman::LabelMap& pred, const batman::LabelMap& gt, int id, int tol) {
  const auto pb = boundary_pixels(pred, id), gb = boundary_pixels(gt, id);
  if (pb.empty() && gb.empty()) return 1.0;
  if (pb.empty() || gb.empty()) return 0.0;
  auto near = [tol](std::pair<int, int> a, const std::vector<std::pair<int, int>>& set) {
    for (auto b : set)
      if (std::max(std::abs(a.first - b.first), std::abs(a.second - b.second)) <= tol) return true;
    return false;
  };
  double hit_p = 0.0, hit_r = 0.0;
  for (auto p : pb) hit_p += near(p, gb);
  for (auto g : gb) hit_r += near(g, pb);
  const double precision = hit_p / static_cast<double>(pb.size());
  const double recall = hit_r / static_cast<double>(gb.size());
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

}  // namespace oracle
