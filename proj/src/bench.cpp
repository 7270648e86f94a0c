#include "lamformer/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <new>
#include <random>

namespace lamformer {

namespace {

Tensor seeded_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Tensor t({rows, cols});
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (double& x : t.data()) x = dist(rng);
  return t;
}

Tensor run_once(AttentionKind kind, const Tensor& q, const Tensor& k, const Tensor& v, std::size_t L,
                std::uint64_t seed, AttentionCounters* counters) {
  switch (kind) {
    case AttentionKind::full: return full_attention(q, k, v, nullptr, counters);
    case AttentionKind::lam: return lam_forward(q, k, v, L, counters);
    case AttentionKind::lam_oracle: return masked_full_attention_oracle(q, k, v, L, counters);
    case AttentionKind::prob: return prob_attention(q, k, v, {.seed = seed}, counters);
  }
  throw ContractError("unknown attention kind");
}

bool quadratic(AttentionKind kind) { return kind == AttentionKind::full || kind == AttentionKind::lam_oracle; }

}  // namespace

BenchRecord bench_cell(AttentionKind kind, std::size_t n, const BenchOptions& opts) {
  BenchRecord rec;
  rec.mechanism = to_string(kind);
  rec.n = n;
  rec.L = opts.l_rule.resolve(n);
  rec.d_model = opts.d_model;
  rec.seed = opts.seed;

  const double score_bytes = static_cast<double>(n) * static_cast<double>(n) * sizeof(double);
  if (quadratic(kind) && score_bytes > opts.score_memory_budget_bytes) {
    rec.skip_reason = "memory";
    return rec;
  }
  try {
    std::mt19937_64 rng(opts.seed ^ (0x9E3779B97F4A7C15ULL * n));
    const Tensor q = seeded_matrix(n, opts.d_model, rng);
    const Tensor k = seeded_matrix(n, opts.d_model, rng);
    const Tensor v = seeded_matrix(n, opts.d_model, rng);

    AttentionCounters counters;
    run_once(kind, q, k, v, rec.L, opts.seed, &counters);
    rec.dot_products = counters.dot_products;
    rec.peak_score_elements = counters.peak_score_elements;

    std::vector<std::uint64_t> times;
    for (std::size_t r = 0; r < std::max<std::size_t>(opts.repeats, 1); ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor out = run_once(kind, q, k, v, rec.L, opts.seed, nullptr);
      const auto t1 = std::chrono::steady_clock::now();
      if (out.empty()) throw NumericError("empty attention output");
      times.push_back(static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
    }
    std::sort(times.begin(), times.end());
    const std::size_t mid = times.size() / 2;
    rec.wall_ns = times.size() % 2 ? times[mid] : (times[mid - 1] + times[mid]) / 2;
    if (*rec.wall_ns == 0) rec.wall_ns = 1;
  } catch (const std::bad_alloc&) {
    rec.wall_ns.reset();
    rec.skip_reason = "out_of_memory";
  }
  return rec;
}

std::vector<BenchRecord> run_bench(const BenchOptions& opts, const std::function<void(const BenchRecord&)>& on_record) {
  if (!std::is_sorted(opts.n_list.begin(), opts.n_list.end())) throw ContractError("n values must be ascending");
  std::vector<BenchRecord> records;
  for (AttentionKind kind : opts.mechanisms) {
    for (std::size_t n : opts.n_list) {
      records.push_back(bench_cell(kind, n, opts));
      if (on_record) on_record(records.back());
    }
  }
  return records;
}

std::string bench_csv_line(const BenchRecord& r) {
  const std::string wall = r.wall_ns ? std::to_string(*r.wall_ns) : "skipped:" + r.skip_reason;
  return r.mechanism + "," + std::to_string(r.n) + "," + std::to_string(r.L) + "," + std::to_string(r.d_model) + "," +
         wall + "," + std::to_string(r.dot_products) + "," + std::to_string(r.peak_score_elements) + "," +
         std::to_string(r.seed);
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& records) {
  out << kBenchHeader << '\n';
  for (const BenchRecord& r : records) out << bench_csv_line(r) << '\n';
}

std::pair<double, double> least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("least squares needs at least two points");
  const auto count = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < x.size(); ++k) mx += x[k], my += y[k];
  mx /= count;
  my /= count;
  double sxy = 0, sxx = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
  }
  if (sxx == 0.0) throw ContractError("least squares needs distinct x values");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

std::vector<ScalingFit> fit_scaling(const std::vector<BenchRecord>& records) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> points;
  for (const BenchRecord& r : records) {
    if (!r.wall_ns) continue;
    if (!points.contains(r.mechanism)) order.push_back(r.mechanism);
    points[r.mechanism].first.push_back(std::log(static_cast<double>(r.n)));
    points[r.mechanism].second.push_back(std::log(static_cast<double>(*r.wall_ns)));
  }
  std::vector<ScalingFit> fits;
  for (const std::string& name : order) {
    const auto& [x, y] = points[name];
    if (x.size() < 2) continue;
    const auto [slope, intercept] = least_squares(x, y);
    fits.push_back({name, slope, intercept, x.size()});
  }
  return fits;
}

}  // namespace lamformer
