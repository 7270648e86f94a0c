#include "lamformer/attention.hpp"

#include <numeric>
#include <random>
#include <string>

namespace lamformer {

double log_in_base(double x, LogBase base) {
  return base == LogBase::two ? std::log2(x) : std::log(x);
}

void AttnConfig::validate() const {
  if (n < 1 || d_q < 1 || d_v < 1 || h < 1 || d_a < 1) {
    throw ContractError("attention config extents must all be >= 1");
  }
  if (L < 1 || L > n) {
    throw ContractError("neighbourhood size L=" + std::to_string(L) + " outside [1, " + std::to_string(n) + "]");
  }
}

Tensor band_mask(std::size_t n, std::size_t L) {
  if (L < 1 || L > n) {
    throw ContractError("band_mask needs 1 <= L <= n, got L=" + std::to_string(L) + ", n=" + std::to_string(n));
  }
  Tensor mask({n, n}, kNegInf);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t first = i + 1 >= L ? i + 1 - L : 0;
    for (std::size_t j = first; j <= i; ++j) mask(i, j) = 0.0;
  }
  return mask;
}

Tensor full_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* mask,
                      AttentionCounters* counters) {
  EagerOps ops;
  return attend_full(ops, q, k, v, mask, counters);
}

Tensor masked_full_attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t L,
                                    AttentionCounters* counters) {
  const Tensor mask = band_mask(q.dim(0), L);
  return full_attention(q, k, v, &mask, counters);
}

std::size_t prob_query_budget(std::size_t n, const ProbOptions& opts) {
  if (n <= 1) return n;
  const double budget = static_cast<double>(opts.factor) * std::ceil(log_in_base(static_cast<double>(n), opts.base));
  return std::clamp<std::size_t>(static_cast<std::size_t>(budget), 1, n);
}

std::vector<std::size_t> select_active_queries(const Tensor& q, const Tensor& k, const ProbOptions& opts,
                                               AttentionCounters* counters) {
  const std::size_t n_q = q.dim(0);
  const std::size_t n_k = k.dim(0);
  const std::size_t d = q.dim(1);
  const std::size_t u = std::min(prob_query_budget(n_q, opts), n_q);
  const std::size_t samples = std::max<std::size_t>(1, prob_query_budget(n_k, opts));

  std::mt19937_64 rng(opts.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n_k - 1);
  std::vector<double> sparsity(n_q);
  for (std::size_t i = 0; i < n_q; ++i) {
    const double* qi = q.row_ptr(i);
    double peak = kNegInf;
    double total = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      const double* kj = k.row_ptr(pick(rng));
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += qi[t] * kj[t];
      peak = std::max(peak, dot);
      total += dot;
    }
    sparsity[i] = peak - total / static_cast<double>(samples);
  }
  if (counters) counters->record(n_q * samples, 0);

  std::vector<std::size_t> order(n_q);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sparsity[a] > sparsity[b]; });
  order.resize(u);
  std::sort(order.begin(), order.end());
  return order;
}

Tensor prob_attention(const Tensor& q, const Tensor& k, const Tensor& v, const ProbOptions& opts,
                      AttentionCounters* counters) {
  EagerOps ops;
  return attend_prob(ops, q, k, v, opts, counters);
}

std::vector<double> attention_band_mass_rows(const Tensor& q, const Tensor& k, std::size_t L) {
  if (L < 1) throw ContractError("band mass needs L >= 1");
  const std::size_t n = q.dim(0);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  const Tensor weights = softmax_lastdim(scale(matmul_nt(q, k), inv_sqrt_d));
  std::vector<double> rows(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t first = i + 1 >= L ? i + 1 - L : 0;
    for (std::size_t j = first; j <= i && j < weights.dim(1); ++j) rows[i] += weights(i, j);
    rows[i] = std::min(rows[i], 1.0);
  }
  return rows;
}

double attention_band_mass(const Tensor& q, const Tensor& k, std::size_t L) {
  const std::vector<double> rows = attention_band_mass_rows(q, k, L);
  double total = 0.0;
  for (double r : rows) total += r;
  return total / static_cast<double>(rows.size());
}

Tensor permute_rows(const Tensor& x, std::span<const std::size_t> pi) {
  const std::size_t n = x.dim(0);
  if (pi.size() != n) throw ContractError("permutation length differs from row count");
  std::vector<char> seen(n, 0);
  std::vector<std::int64_t> indices;
  indices.reserve(n);
  for (std::size_t p : pi) {
    if (p >= n || seen[p]) throw ContractError("row map is not a permutation");
    seen[p] = 1;
    indices.push_back(static_cast<std::int64_t>(p));
  }
  return gather_rows_padded(x, indices, 0.0);
}

std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> pi) {
  std::vector<std::size_t> inv(pi.size());
  for (std::size_t i = 0; i < pi.size(); ++i) {
    if (pi[i] >= pi.size()) throw ContractError("row map is not a permutation");
    inv[pi[i]] = i;
  }
  return inv;
}

MultiHeadParamCount count_multihead_params(const AttnConfig& cfg) {
  MultiHeadParamCount count;
  count.from_shapes = cfg.h * cfg.d_a * (2 * cfg.d_q + cfg.d_v) + cfg.h * cfg.d_a * cfg.d_v;
  count.printed_formula = cfg.d_a * (2 * cfg.d_q + (cfg.h + 1) * cfg.d_v);
  return count;
}

}  // namespace lamformer
