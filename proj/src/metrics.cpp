#include "batman/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <stdexcept>

namespace batman {

namespace {
void require_same_extent(const LabelMap& a, const LabelMap& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument(std::string(what) + ": masks differ in extent");
  }
}

std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& m, std::size_t h, std::size_t w, int r) {
  // Separable Chebyshev dilation: rows then columns.
  std::vector<std::uint8_t> tmp(m.size(), 0), out(m.size(), 0);
  const long hl = static_cast<long>(h), wl = static_cast<long>(w);
  for (long y = 0; y < hl; ++y) {
    for (long x = 0; x < wl; ++x) {
      for (long d = -r; d <= r; ++d) {
        const long xx = x + d;
        if (xx >= 0 && xx < wl && m[y * wl + xx]) {
          tmp[y * wl + x] = 1;
          break;
        }
      }
    }
  }
  for (long y = 0; y < hl; ++y) {
    for (long x = 0; x < wl; ++x) {
      for (long d = -r; d <= r; ++d) {
        const long yy = y + d;
        if (yy >= 0 && yy < hl && tmp[yy * wl + x]) {
          out[y * wl + x] = 1;
          break;
        }
      }
    }
  }
  return out;
}
}  // namespace

double region_j(const LabelMap& pred, const LabelMap& gt, int id) {
  require_same_extent(pred, gt, "region_j");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool p = pred.labels[i] == id, g = gt.labels[i] == id;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::uint8_t> boundary_map(const LabelMap& m, int id) {
  std::vector<std::uint8_t> b(m.labels.size(), 0);
  const std::size_t h = m.height, w = m.width;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (m.at(y, x) != id) continue;
      const bool edge = (y > 0 && m.at(y - 1, x) != id) || (y + 1 < h && m.at(y + 1, x) != id) ||
                        (x > 0 && m.at(y, x - 1) != id) || (x + 1 < w && m.at(y, x + 1) != id);
      b[y * w + x] = edge;
    }
  }
  return b;
}

double boundary_f(const LabelMap& pred, const LabelMap& gt, int id, int tolerance) {
  require_same_extent(pred, gt, "boundary_f");
  if (tolerance < 0) throw std::invalid_argument("boundary_f: negative tolerance");
  const auto bp = boundary_map(pred, id), bg = boundary_map(gt, id);
  std::size_t np = 0, ng = 0;
  for (std::size_t i = 0; i < bp.size(); ++i) {
    np += bp[i];
    ng += bg[i];
  }
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const auto dp = dilate(bp, pred.height, pred.width, tolerance);
  const auto dg = dilate(bg, gt.height, gt.width, tolerance);
  std::size_t hit_p = 0, hit_g = 0;
  for (std::size_t i = 0; i < bp.size(); ++i) {
    hit_p += bp[i] && dg[i];
    hit_g += bg[i] && dp[i];
  }
  const double precision = static_cast<double>(hit_p) / static_cast<double>(np);
  const double recall = static_cast<double>(hit_g) / static_cast<double>(ng);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

int default_boundary_tolerance(std::size_t height, std::size_t width) {
  const double diag = std::sqrt(static_cast<double>(height * height + width * width));
  return std::max(1, static_cast<int>(std::lround(0.008 * diag)));
}

JFSummary jf_report(const std::vector<FrameScore>& scores) {
  if (scores.empty()) throw std::invalid_argument("jf_report: no scores");
  struct Acc {
    double j = 0.0, f = 0.0;
    std::size_t n = 0;
  };
  std::map<std::pair<std::string, std::size_t>, Acc> frames;
  for (const auto& s : scores) {
    auto& a = frames[{s.sequence, s.frame}];
    a.j += s.j;
    a.f += s.f;
    ++a.n;
  }
  JFSummary out;
  for (const auto& [key, a] : frames) {
    out.j += a.j / static_cast<double>(a.n);
    out.f += a.f / static_cast<double>(a.n);
  }
  out.frames = frames.size();
  out.entries = scores.size();
  out.j /= static_cast<double>(out.frames);
  out.f /= static_cast<double>(out.frames);
  out.jf = 0.5 * (out.j + out.f);
  return out;
}

std::vector<FrameScore> score_sequence(const std::string& name, const std::vector<LabelMap>& pred,
                                       const std::vector<LabelMap>& gt, int tolerance) {
  if (pred.size() != gt.size() || gt.empty()) {
    throw std::invalid_argument("score_sequence: prediction and ground truth lengths differ");
  }
  if (tolerance < 0) tolerance = default_boundary_tolerance(gt[0].height, gt[0].width);
  const int objects = gt[0].max_label();
  std::vector<FrameScore> out;
  for (std::size_t t = 1; t < gt.size(); ++t) {
    for (int id = 1; id <= objects; ++id) {
      out.push_back({name, t, id, region_j(pred[t], gt[t], id), boundary_f(pred[t], gt[t], id, tolerance)});
    }
  }
  return out;
}

void write_scores_csv(std::ostream& out, const std::vector<FrameScore>& scores) {
  out << "sequence,frame,object,J,F\n";
  char buf[64];
  for (const auto& s : scores) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f", s.j, s.f);
    out << s.sequence << ',' << s.frame << ',' << s.object << buf << '\n';
  }
}

nlohmann::json summary_json(const JFSummary& s) {
  return {{"J", s.j}, {"F", s.f}, {"JF", s.jf}, {"frames", s.frames}, {"entries", s.entries}};
}

std::string summary_line(const JFSummary& s) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "J=%.4f F=%.4f J&F=%.4f (%zu frames)", s.j, s.f, s.jf, s.frames);
  return buf;
}

}  // namespace batman
