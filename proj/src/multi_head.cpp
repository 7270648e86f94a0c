#include "lamformer/multi_head.hpp"

#include <cmath>
#include <stdexcept>

#include "lamformer/eager_ops.hpp"

namespace lamformer {

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::full: return "full";
    case AttentionKind::lam: return "lam";
    case AttentionKind::prob: return "prob";
    case AttentionKind::lam_oracle: return "lam_oracle";
  }
  return "?";
}

AttentionKind parse_attention_kind(std::string_view text) {
  if (text == "full") return AttentionKind::full;
  if (text == "lam") return AttentionKind::lam;
  if (text == "prob") return AttentionKind::prob;
  if (text == "lam_oracle") return AttentionKind::lam_oracle;
  throw std::invalid_argument("unknown attention kind '" + std::string(text) + "'");
}

Tensor uniform_tensor(Tensor::Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& x : t.data()) x = dist(rng);
  return t;
}

HeadWeights init_head_weights(const AttnConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  HeadWeights w;
  const double qk_bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_q));
  const double v_bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_v));
  for (std::size_t i = 0; i < cfg.h; ++i) {
    w.query.push_back(uniform_tensor({cfg.d_a, cfg.d_q}, qk_bound, rng));
    w.key.push_back(uniform_tensor({cfg.d_a, cfg.d_q}, qk_bound, rng));
    w.value.push_back(uniform_tensor({cfg.d_a, cfg.d_v}, v_bound, rng));
  }
  w.output = uniform_tensor({cfg.h * cfg.d_a, cfg.d_v}, 1.0 / std::sqrt(static_cast<double>(cfg.h * cfg.d_a)), rng);
  return w;
}

Tensor multi_head(const Tensor& q, const Tensor& k, const Tensor& v, const HeadWeights& w,
                  const AttentionSpec& spec, AttentionCounters* counters) {
  EagerOps ops;
  return multi_head(ops, q, k, v, w, spec, 0, counters);
}

}  // namespace lamformer
