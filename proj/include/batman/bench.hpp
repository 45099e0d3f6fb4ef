#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "batman/attention.hpp"

namespace batman {

struct BenchConfig {
  std::vector<std::size_t> sides{16, 32, 64, 128};  // grid side in tokens, ascending
  std::size_t reps = 20;
  std::uint64_t seed = 0;
  AttentionConfig attention = AttentionConfig::full_scale();
  void validate() const;
};

struct BenchRow {
  std::string variant;  // "dense" or "windowed"
  std::size_t side = 0;
  std::size_t tokens = 0;
  double median_seconds = 0.0;
  double mean_candidates = 0.0;  // admitted keys per query (one frame)
  std::size_t max_candidates = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double slope_dense = 0.0;     // d log(time) / d log(tokens)
  double slope_windowed = 0.0;
  std::size_t candidate_bound = 0;  // (2 W_d + 1)^2

  double slope_gap() const { return slope_dense - slope_windowed; }
};

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Times dense masked attention (every key scored) against windowed attention
/// on one memory frame, single-threaded. Throws std::logic_error if any query
/// admits more than (2 W_d + 1)^2 keys.
BenchReport bench_attention(const BenchConfig& cfg);

/// Header "variant,side,tokens,median_seconds,mean_candidates,max_candidates".
void write_bench_csv(std::ostream& out, const BenchReport& report);
nlohmann::json bench_json(const BenchReport& report);

}  // namespace batman
