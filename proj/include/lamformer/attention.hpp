#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lamformer/eager_ops.hpp"
#include "lamformer/tensor.hpp"

namespace lamformer {

enum class LogBase { two, natural };

double log_in_base(double x, LogBase base);

// Shape record for one attention layer.
//   n: sequence length, d_q: query/key width, d_v: value width,
//   L: neighbourhood size (local attention only), h: heads, d_a: per-head width.
struct AttnConfig {
  std::size_t n = 1;
  std::size_t d_q = 1;
  std::size_t d_v = 1;
  std::size_t L = 1;
  std::size_t h = 1;
  std::size_t d_a = 1;

  void validate() const;
};

// Work done by attention calls: one count per score dot product <Q_i, K_j>,
// and the largest score tensor a single call materialised.
struct AttentionCounters {
  std::uint64_t dot_products = 0;
  std::uint64_t peak_score_elements = 0;

  void record(std::uint64_t dots, std::uint64_t score_elements) {
    dot_products += dots;
    peak_score_elements = std::max(peak_score_elements, score_elements);
  }
};

// M[i,j] = 0 when i-L+1 <= j <= i, -inf otherwise.
Tensor band_mask(std::size_t n, std::size_t L);

// softmax((Q K^T + mask) / sqrt(d_q)) V, generic over the evaluation policy.
template <class Ops>
typename Ops::Value attend_full(Ops& ops, const typename Ops::Value& q, const typename Ops::Value& k,
                                const typename Ops::Value& v, const Tensor* mask,
                                AttentionCounters* counters) {
  const Tensor& qv = ops.value(q);
  const Tensor& kv = ops.value(k);
  if (qv.rank() != 2 || kv.rank() != 2 || qv.dim(1) != kv.dim(1) || kv.dim(0) != ops.value(v).dim(0)) {
    throw DimensionError("attention operands incompatible: Q " + shape_string(qv.shape()) + ", K " +
                         shape_string(kv.shape()) + ", V " + shape_string(ops.value(v).shape()));
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(qv.dim(1)));
  const std::uint64_t before = dot_product_tally();
  auto scores = ops.matmul_nt(q, k);
  if (counters) counters->record(dot_product_tally() - before, qv.dim(0) * kv.dim(0));
  if (mask) scores = ops.add_constant(std::move(scores), *mask);
  scores = ops.scale(std::move(scores), inv_sqrt_d);
  auto weights = ops.softmax(std::move(scores));
  return ops.matmul(weights, v);
}

Tensor full_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* mask = nullptr,
                      AttentionCounters* counters = nullptr);

// Ground-truth local attention computed the quadratic way: full attention
// under band_mask(n, L).
Tensor masked_full_attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t L,
                                    AttentionCounters* counters = nullptr);

// --- probabilistic (query-selection) attention --------------------------------

struct ProbOptions {
  std::uint64_t seed = 0;
  LogBase base = LogBase::two;
  std::size_t factor = 5;
};

// u = factor * ceil(log n), clamped to [1, n]. Also the number of keys sampled
// per query for the sparsity estimate.
std::size_t prob_query_budget(std::size_t n, const ProbOptions& opts);

// Indices (ascending) of the u queries with the largest max-minus-mean score
// over a seeded sample of keys.
std::vector<std::size_t> select_active_queries(const Tensor& q, const Tensor& k, const ProbOptions& opts,
                                               AttentionCounters* counters);

template <class Ops>
typename Ops::Value attend_prob(Ops& ops, const typename Ops::Value& q, const typename Ops::Value& k,
                                const typename Ops::Value& v, const ProbOptions& opts,
                                AttentionCounters* counters) {
  const std::size_t n = ops.value(q).dim(0);
  const std::size_t u = prob_query_budget(n, opts);
  if (u >= n) return attend_full(ops, q, k, v, nullptr, counters);

  const std::vector<std::size_t> active = select_active_queries(ops.value(q), ops.value(k), opts, counters);
  std::vector<std::int64_t> picked(active.begin(), active.end());
  auto q_active = ops.gather_rows(q, picked, 0.0);
  auto attended = attend_full(ops, q_active, k, v, nullptr, counters);

  // Inactive queries have uniform scores, so their output is the mean value row.
  std::vector<typename Ops::Value> stacked_parts{attended, ops.column_mean(v)};
  auto stacked = ops.concat_rows(std::span<const typename Ops::Value>(stacked_parts));
  std::vector<std::int64_t> route(n, static_cast<std::int64_t>(active.size()));
  for (std::size_t a = 0; a < active.size(); ++a) route[active[a]] = static_cast<std::int64_t>(a);
  return ops.gather_rows(stacked, std::move(route), 0.0);
}

Tensor prob_attention(const Tensor& q, const Tensor& k, const Tensor& v, const ProbOptions& opts = {},
                      AttentionCounters* counters = nullptr);

// --- diagnostics ---------------------------------------------------------------

// Mean over rows of the unmasked softmax mass falling in the band
// [i-L+1, i]: how much attention a local window of size L would keep.
double attention_band_mass(const Tensor& q, const Tensor& k, std::size_t L);

// Per-row terms of attention_band_mass.
std::vector<double> attention_band_mass_rows(const Tensor& q, const Tensor& k, std::size_t L);

// out[i,:] = x[pi[i],:]. Throws ContractError if pi is not a bijection.
Tensor permute_rows(const Tensor& x, std::span<const std::size_t> pi);
std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> pi);

struct MultiHeadParamCount {
  std::size_t from_shapes = 0;      // h*d_a*(2 d_q + d_v) + h*d_a*d_v
  std::size_t printed_formula = 0;  // d_a*(2 d_q + (h+1) d_v)
};

MultiHeadParamCount count_multihead_params(const AttnConfig& cfg);

}  // namespace lamformer
