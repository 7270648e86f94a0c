#include "lamformer/local_attention.hpp"

#include <algorithm>
#include <stdexcept>

#include "lamformer/eager_ops.hpp"

namespace lamformer {

namespace {

void check_window(std::size_t n, std::size_t L) {
  if (L < 1 || L > n) {
    throw ContractError("neighbourhood size L=" + std::to_string(L) + " outside [1, " + std::to_string(n) + "]");
  }
}

Tensor split_window_rows(const Tensor& m, std::size_t L) {
  if (m.rank() != 2) throw DimensionError("expected a matrix, got " + shape_string(m.shape()));
  check_window(m.dim(0), L);
  const std::size_t s = m.dim(0) / L;
  return gather_rows_padded(m, key_block_rows(s, L), 0.0).reshaped({s, 2 * L - 1, m.dim(1)});
}

}  // namespace

BlockIndex block_of_row(std::size_t i, std::size_t L) {
  const std::size_t i1 = i % L;
  return {(i - i1) / L, i1};
}

std::int64_t key_slot(std::size_t j, std::size_t r, std::size_t L) {
  return static_cast<std::int64_t>(j) - (static_cast<std::int64_t>(r) - 1) * static_cast<std::int64_t>(L) - 1;
}

std::vector<std::int64_t> query_block_rows(std::size_t s, std::size_t L) {
  std::vector<std::int64_t> rows(s * L);
  for (std::size_t k = 0; k < rows.size(); ++k) rows[k] = static_cast<std::int64_t>(k);
  return rows;
}

std::vector<std::int64_t> key_block_rows(std::size_t s, std::size_t L) {
  const std::size_t width = 2 * L - 1;
  const auto Li = static_cast<std::int64_t>(L);
  std::vector<std::int64_t> rows;
  rows.reserve(s * width);
  for (std::size_t r = 0; r < s; ++r)
    for (std::size_t j1 = 0; j1 < width; ++j1)
      rows.push_back((static_cast<std::int64_t>(r) - 1) * Li + 1 + static_cast<std::int64_t>(j1));
  return rows;
}

Tensor local_mask(std::size_t s, std::size_t L, const LamOptions& opts) {
  if (s < 1 || L < 1) throw ContractError("local_mask needs s >= 1 and L >= 1");
  const std::size_t width = 2 * L - 1;
  Tensor mask({s, L, width}, kNegInf);
  const auto Li = static_cast<std::int64_t>(L);
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t i1 = 0; i1 < L; ++i1) {
      for (std::size_t j1 = i1; j1 <= i1 + L - 1; ++j1) {
        const std::int64_t source = (static_cast<std::int64_t>(r) - 1) * Li + 1 + static_cast<std::int64_t>(j1);
        if (opts.mask_padding && source < 0) continue;
        mask(r, i1, j1) = 0.0;
      }
    }
  }
  return mask;
}

Tensor remainder_mask(std::size_t rows, std::size_t L) {
  const std::size_t cols = rows + L - 1;
  Tensor mask({rows, cols}, kNegInf);
  for (std::size_t a = 0; a < rows; ++a)
    for (std::size_t b = a; b <= a + L - 1; ++b) mask(a, b) = 0.0;
  return mask;
}

Tensor split_queries(const Tensor& q, std::size_t L) {
  if (q.rank() != 2) throw DimensionError("expected a matrix, got " + shape_string(q.shape()));
  check_window(q.dim(0), L);
  const std::size_t s = q.dim(0) / L;
  return gather_rows_padded(q, query_block_rows(s, L), 0.0).reshaped({s, L, q.dim(1)});
}

Tensor split_keys(const Tensor& k, std::size_t L) { return split_window_rows(k, L); }

Tensor split_values(const Tensor& v, std::size_t L) { return split_window_rows(v, L); }

BlockedAttn decompose(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t L, const LamOptions& opts) {
  detail::check_local_operands(q, k, v, L);
  BlockedAttn out;
  out.L = L;
  out.s = q.dim(0) / L;
  out.tq = split_queries(q, L);
  out.tk = split_keys(k, L);
  out.tv = split_values(v, L);
  out.tm = local_mask(out.s, L, opts);
  out.remainder_rows = q.dim(0) - out.s * L;
  return out;
}

std::uint64_t local_score_elements(std::size_t n, std::size_t L) {
  const std::uint64_t s = n / L;
  const std::uint64_t rest = n - s * L;
  const std::uint64_t slab = rest == 0 ? 0 : rest * (rest + L - 1);
  return s * L * (2 * L - 1) + slab;
}

std::size_t default_L(std::size_t n, BandRuleKind kind, LogBase base) {
  return BandRule{kind, 0, base}.resolve(n);
}

std::size_t BandRule::resolve(std::size_t n) const {
  if (n < 1) throw ContractError("sequence length must be >= 1");
  double raw = 0.0;
  const double lg = log_in_base(static_cast<double>(n), base);
  switch (kind) {
    case BandRuleKind::four_ceil: raw = 4.0 * std::ceil(lg); break;
    case BandRuleKind::ceil_four: raw = std::ceil(4.0 * lg); break;
    case BandRuleKind::fixed: raw = static_cast<double>(fixed); break;
  }
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 0.0)), 1, n);
}

std::string BandRule::to_string() const {
  switch (kind) {
    case BandRuleKind::four_ceil: return "4ceil";
    case BandRuleKind::ceil_four: return "ceil4";
    case BandRuleKind::fixed: return "fixed:" + std::to_string(fixed);
  }
  return "?";
}

BandRule BandRule::parse(const std::string& text) {
  if (text == "4ceil") return {BandRuleKind::four_ceil};
  if (text == "ceil4") return {BandRuleKind::ceil_four};
  if (text.rfind("fixed:", 0) == 0) {
    std::size_t value = 0;
    try {
      std::size_t used = 0;
      value = std::stoul(text.substr(6), &used);
      if (used != text.size() - 6) throw std::invalid_argument(text);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad fixed band size in '" + text + "'");
    }
    if (value < 1) throw std::invalid_argument("fixed band size must be >= 1");
    return {BandRuleKind::fixed, value};
  }
  throw std::invalid_argument("unknown L rule '" + text + "' (expected 4ceil, ceil4 or fixed:<k>)");
}

namespace detail {

void check_local_operands(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t L) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.shape() != k.shape() || v.dim(0) != q.dim(0)) {
    throw DimensionError("local attention operands incompatible: Q " + shape_string(q.shape()) + ", K " +
                         shape_string(k.shape()) + ", V " + shape_string(v.shape()));
  }
  check_window(q.dim(0), L);
}

}  // namespace detail

Tensor lam_forward(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t L, AttentionCounters* counters,
                   const LamOptions& opts) {
  EagerOps ops;
  return attend_local(ops, q, k, v, L, opts, counters);
}

}  // namespace lamformer
