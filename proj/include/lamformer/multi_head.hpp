#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "lamformer/attention.hpp"
#include "lamformer/local_attention.hpp"

namespace lamformer {

// lam_oracle evaluates local attention through the quadratic masked path; it
// exists to check that the blocked kernel is a drop-in replacement.
enum class AttentionKind { full, lam, prob, lam_oracle };

std::string to_string(AttentionKind kind);
AttentionKind parse_attention_kind(std::string_view text);

struct AttentionSpec {
  AttentionKind kind = AttentionKind::full;
  std::size_t L = 0;  // 0: derive from n via band_rule
  BandRule band_rule{};
  LamOptions lam{};
  ProbOptions prob{};

  std::size_t window(std::size_t n) const { return L == 0 ? band_rule.resolve(n) : std::min(L, n); }
};

// Called with every projected per-head (Q, K) pair a multi-head layer attends over.
using AttentionProbe = std::function<void(std::size_t head, const Tensor& q, const Tensor& k)>;

// Per head i: query/key (d_a x d_q) and value (d_a x d_v) projections, applied
// as X * W^T. One shared output projection of shape (h*d_a) x d_v.
template <class V>
struct BasicHeadWeights {
  std::vector<V> query;
  std::vector<V> key;
  std::vector<V> value;
  V output{};

  std::size_t heads() const noexcept { return query.size(); }
};

using HeadWeights = BasicHeadWeights<Tensor>;

// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
HeadWeights init_head_weights(const AttnConfig& cfg, std::mt19937_64& rng);
Tensor uniform_tensor(Tensor::Shape shape, double bound, std::mt19937_64& rng);

template <class Ops>
typename Ops::Value attend(Ops& ops, const typename Ops::Value& q, const typename Ops::Value& k,
                           const typename Ops::Value& v, const AttentionSpec& spec, std::uint64_t stream,
                           AttentionCounters* counters) {
  const std::size_t n = ops.value(q).dim(0);
  switch (spec.kind) {
    case AttentionKind::full:
      return attend_full(ops, q, k, v, nullptr, counters);
    case AttentionKind::lam:
      return attend_local(ops, q, k, v, spec.window(n), spec.lam, counters);
    case AttentionKind::lam_oracle: {
      const Tensor mask = band_mask(n, spec.window(n));
      return attend_full(ops, q, k, v, &mask, counters);
    }
    case AttentionKind::prob: {
      ProbOptions prob = spec.prob;
      prob.seed = spec.prob.seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
      return attend_prob(ops, q, k, v, prob, counters);
    }
  }
  throw ContractError("unknown attention kind");
}

// Concat(head_1..head_h) W^O with head_i = Attn(Q W_i^Q^T, K W_i^K^T, V W_i^V^T).
template <class Ops>
typename Ops::Value multi_head(Ops& ops, const typename Ops::Value& q, const typename Ops::Value& k,
                               const typename Ops::Value& v, const BasicHeadWeights<typename Ops::Value>& w,
                               const AttentionSpec& spec, std::uint64_t stream = 0,
                               AttentionCounters* counters = nullptr, const AttentionProbe* probe = nullptr) {
  using Value = typename Ops::Value;
  std::vector<Value> heads;
  heads.reserve(w.heads());
  for (std::size_t i = 0; i < w.heads(); ++i) {
    auto qh = ops.matmul_nt(q, w.query[i]);
    auto kh = ops.matmul_nt(k, w.key[i]);
    auto vh = ops.matmul_nt(v, w.value[i]);
    if (probe && *probe) (*probe)(i, ops.value(qh), ops.value(kh));
    heads.push_back(attend(ops, qh, kh, vh, spec, stream * 1024 + i, counters));
  }
  if (heads.size() == 1) return ops.matmul(heads.front(), w.output);
  auto joined = ops.concat_cols(std::span<const Value>(heads));
  return ops.matmul(joined, w.output);
}

Tensor multi_head(const Tensor& q, const Tensor& k, const Tensor& v, const HeadWeights& w,
                  const AttentionSpec& spec, AttentionCounters* counters = nullptr);

}  // namespace lamformer
