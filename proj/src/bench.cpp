#include "batman/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "batman/parallel.hpp"
#include "batman/rng.hpp"

namespace batman {

void BenchConfig::validate() const {
  attention.validate();
  if (sides.size() < 2) throw std::invalid_argument("bench: need at least two grid sizes");
  for (std::size_t i = 0; i < sides.size(); ++i) {
    if (sides[i] == 0) throw std::invalid_argument("bench: grid side must be positive");
    if (i && sides[i] <= sides[i - 1]) throw std::invalid_argument("bench: grid sizes must be ascending");
  }
  if (reps == 0) throw std::invalid_argument("bench: reps must be positive");
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need >= 2 paired points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

namespace {

template <class F>
double median_seconds(std::size_t reps, F&& body) {
  std::vector<double> t(reps);
  for (auto& s : t) {
    const auto start = std::chrono::steady_clock::now();
    body();
    s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  std::sort(t.begin(), t.end());
  return reps % 2 ? t[reps / 2] : 0.5 * (t[reps / 2 - 1] + t[reps / 2]);
}

// Keeps the optimiser from discarding a result.
volatile double g_sink = 0.0;

}  // namespace

BenchReport bench_attention(const BenchConfig& cfg) {
  cfg.validate();
  const std::size_t saved_threads = num_threads();
  set_num_threads(1);
  BenchReport report;
  report.candidate_bound = cfg.attention.window_area();
  std::vector<double> tokens, dense_t, windowed_t;
  try {
    for (std::size_t side : cfg.sides) {
      const std::size_t n = side * side, c = cfg.attention.head_dim;
      Rng rng(derive_seed(cfg.seed, side));
      const Tensor q = randn({n, c}, rng), k = randn({n, c}, rng), v = randn({n, c}, rng);
      const BilateralEncoding e{randn({n, 1}, rng), side, side};
      const BilateralMask m = build_bilateral_mask(e, cfg.attention);
      if (m.max_count() > report.candidate_bound) {
        throw std::logic_error("bench: a query admits " + std::to_string(m.max_count()) + " keys, bound is " +
                               std::to_string(report.candidate_bound));
      }
      const double mean = static_cast<double>(m.total()) / static_cast<double>(n);
      const double td = median_seconds(cfg.reps, [&] { g_sink = bi_attn_exact(q, k, v, m)[0]; });
      const double tw = median_seconds(cfg.reps, [&] { g_sink = bi_attn_windowed(q, k, v, m, &e.values)[0]; });
      report.rows.push_back({"dense", side, n, td, mean, m.max_count()});
      report.rows.push_back({"windowed", side, n, tw, mean, m.max_count()});
      tokens.push_back(static_cast<double>(n));
      dense_t.push_back(td);
      windowed_t.push_back(tw);
    }
  } catch (...) {
    set_num_threads(saved_threads);
    throw;
  }
  set_num_threads(saved_threads);
  report.slope_dense = loglog_slope(tokens, dense_t);
  report.slope_windowed = loglog_slope(tokens, windowed_t);
  return report;
}

void write_bench_csv(std::ostream& out, const BenchReport& report) {
  out << "variant,side,tokens,median_seconds,mean_candidates,max_candidates\n";
  char buf[160];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.9f,%.4f,%zu\n", r.variant.c_str(), r.side, r.tokens,
                  r.median_seconds, r.mean_candidates, r.max_candidates);
    out << buf;
  }
}

nlohmann::json bench_json(const BenchReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"variant", r.variant},
                    {"side", r.side},
                    {"tokens", r.tokens},
                    {"median_seconds", r.median_seconds},
                    {"mean_candidates", r.mean_candidates},
                    {"max_candidates", r.max_candidates}});
  }
  return {{"rows", rows},
          {"slope_dense", report.slope_dense},
          {"slope_windowed", report.slope_windowed},
          {"slope_gap", report.slope_gap()},
          {"candidate_bound", report.candidate_bound}};
}

}  // namespace batman
