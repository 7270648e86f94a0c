#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lamformer/multi_head.hpp"

namespace lamformer {

inline constexpr const char* kBenchHeader = "mechanism,n,L,d_model,wall_ns,dot_products,peak_score_elements,seed";

struct BenchOptions {
  std::vector<std::size_t> n_list{512, 1024, 2048, 4096, 8192, 16384};
  std::vector<AttentionKind> mechanisms{AttentionKind::full, AttentionKind::lam, AttentionKind::prob};
  BandRule l_rule{BandRuleKind::fixed, 32};
  std::size_t d_model = 16;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  // Cells whose n x n score matrix would exceed this are skipped.
  double score_memory_budget_bytes = 3.0e9;
};

struct BenchRecord {
  std::string mechanism;
  std::size_t n = 0;
  std::size_t L = 0;
  std::size_t d_model = 0;
  std::optional<std::uint64_t> wall_ns;  // median; empty when skipped
  std::string skip_reason;
  std::uint64_t dot_products = 0;
  std::uint64_t peak_score_elements = 0;
  std::uint64_t seed = 0;
};

// One single-head attention call per repetition on seeded random Q, K, V of
// shape n x d_model. A warm-up call precedes the timed repetitions.
BenchRecord bench_cell(AttentionKind kind, std::size_t n, const BenchOptions& opts);

std::vector<BenchRecord> run_bench(const BenchOptions& opts,
                                   const std::function<void(const BenchRecord&)>& on_record = {});

void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& records);
std::string bench_csv_line(const BenchRecord& r);

struct ScalingFit {
  std::string mechanism;
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t points = 0;
};

// Least-squares fit of log(wall_ns) against log(n) per mechanism over the
// timed rows; mechanisms with fewer than two timed rows are omitted.
std::vector<ScalingFit> fit_scaling(const std::vector<BenchRecord>& records);

// Slope and intercept of the least-squares line through (x, y).
std::pair<double, double> least_squares(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace lamformer
