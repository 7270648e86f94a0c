#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lamformer/attention.hpp"
#include "lamformer/tensor.hpp"

namespace lamformer {

// Blocked local attention.
//
// Rows of Q are cut into s = floor(n/L) blocks of L rows. Block r of K and V
// holds source rows (r-1)L+1 .. (r+1)L-1, i.e. 2L-1 rows, enough to cover the
// band [i-L+1, i] of every query i in the block. One batched product per
// tensor then yields every needed score with (2L-1) dot products per query.
// The n - sL rows that do not fill a block are computed as one extra slab.

struct BlockIndex {
  std::size_t r = 0;   // block
  std::size_t i1 = 0;  // row inside the block
};

// i -> (r, i1) with i = r*L + i1.
BlockIndex block_of_row(std::size_t i, std::size_t L);

// Column j of the full score matrix -> column j1 of key block r. May be
// negative or >= 2L-1 when j is outside the block's key window.
std::int64_t key_slot(std::size_t j, std::size_t r, std::size_t L);

// Source rows for the blocked tensors, flattened block by block. Key/value
// indices below zero mark padding rows (only in block 0).
std::vector<std::int64_t> query_block_rows(std::size_t s, std::size_t L);
std::vector<std::int64_t> key_block_rows(std::size_t s, std::size_t L);

struct LamOptions {
  // Mask the zero-padded key rows of block 0. Turning this off reproduces the
  // mask exactly as the band condition alone defines it; rows i < L-1 then
  // leak weight onto padding. Kept only so the verification suite can prove
  // it catches that.
  bool mask_padding = true;
};

// T_M[r,i1,j1] = 0 iff i1 <= j1 <= i1+L-1 and source row (r-1)L+1+j1 >= 0.
Tensor local_mask(std::size_t s, std::size_t L, const LamOptions& opts = {});

// rows x (rows+L-1) mask for the trailing slab: a <= b <= a+L-1.
Tensor remainder_mask(std::size_t rows, std::size_t L);

Tensor split_queries(const Tensor& q, std::size_t L);
Tensor split_keys(const Tensor& k, std::size_t L);
Tensor split_values(const Tensor& v, std::size_t L);

struct BlockedAttn {
  std::size_t s = 0;
  std::size_t L = 0;
  Tensor tq;  // s x L x d_q
  Tensor tk;  // s x (2L-1) x d_q
  Tensor tv;  // s x (2L-1) x d_v
  Tensor tm;  // s x L x (2L-1)
  std::size_t remainder_rows = 0;
};

BlockedAttn decompose(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t L,
                      const LamOptions& opts = {});

// Score elements one forward materialises: s*L*(2L-1) plus the remainder slab.
std::uint64_t local_score_elements(std::size_t n, std::size_t L);

enum class BandRuleKind { four_ceil, ceil_four, fixed };

// How L is derived from n: 4*ceil(log n), ceil(4 log n), or a fixed value.
// The result is clamped to [1, n].
struct BandRule {
  BandRuleKind kind = BandRuleKind::four_ceil;
  std::size_t fixed = 0;
  LogBase base = LogBase::two;

  std::size_t resolve(std::size_t n) const;
  std::string to_string() const;
  static BandRule parse(const std::string& text);
};

std::size_t default_L(std::size_t n, BandRuleKind kind = BandRuleKind::four_ceil, LogBase base = LogBase::two);

namespace detail {
void check_local_operands(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t L);
}

template <class Ops>
typename Ops::Value attend_local(Ops& ops, const typename Ops::Value& q, const typename Ops::Value& k,
                                 const typename Ops::Value& v, std::size_t L, const LamOptions& opts,
                                 AttentionCounters* counters) {
  detail::check_local_operands(ops.value(q), ops.value(k), ops.value(v), L);
  const std::size_t n = ops.value(q).dim(0);
  const std::size_t d_q = ops.value(q).dim(1);
  const std::size_t d_v = ops.value(v).dim(1);
  const std::size_t s = n / L;
  const std::size_t rest = n - s * L;
  const std::size_t width = 2 * L - 1;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d_q));

  auto tq = ops.reshape(ops.gather_rows(q, query_block_rows(s, L), 0.0), {s, L, d_q});
  auto tk = ops.reshape(ops.gather_rows(k, key_block_rows(s, L), 0.0), {s, width, d_q});
  auto tv = ops.reshape(ops.gather_rows(v, key_block_rows(s, L), 0.0), {s, width, d_v});

  std::uint64_t before = dot_product_tally();
  auto ta = ops.matmul_nt(tq, tk);
  std::uint64_t dots = dot_product_tally() - before;

  auto ts = ops.softmax(ops.scale(ops.add_constant(std::move(ta), local_mask(s, L, opts)), inv_sqrt_d));
  // Row-major s x L x d_v is already the concatenation of the blocks along L.
  auto blocked = ops.reshape(ops.matmul(ts, tv), {s * L, d_v});

  if (rest == 0) {
    if (counters) counters->record(dots, local_score_elements(n, L));
    return blocked;
  }

  const std::size_t first = s * L;
  const std::size_t key_first = first + 1 - L;
  std::vector<std::int64_t> q_rows, kv_rows;
  for (std::size_t i = first; i < n; ++i) q_rows.push_back(static_cast<std::int64_t>(i));
  for (std::size_t j = key_first; j < n; ++j) kv_rows.push_back(static_cast<std::int64_t>(j));

  auto kr = ops.gather_rows(k, kv_rows, 0.0);
  auto vr = ops.gather_rows(v, std::move(kv_rows), 0.0);
  auto qr = ops.gather_rows(q, std::move(q_rows), 0.0);
  before = dot_product_tally();
  auto scores = ops.matmul_nt(qr, kr);
  dots += dot_product_tally() - before;
  auto weights = ops.softmax(ops.scale(ops.add_constant(std::move(scores), remainder_mask(rest, L)), inv_sqrt_d));
  auto tail = ops.matmul(weights, vr);

  if (counters) counters->record(dots, local_score_elements(n, L));
  std::vector<typename Ops::Value> parts{blocked, tail};
  return ops.concat_rows(std::span<const typename Ops::Value>(parts));
}

// Local attention of window L over Q (n x d_q), K (n x d_q), V (n x d_v) in
// Theta(nL) time and memory. Matches masked_full_attention_oracle.
Tensor lam_forward(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t L,
                   AttentionCounters* counters = nullptr, const LamOptions& opts = {});

}  // namespace lamformer
