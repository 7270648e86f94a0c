#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lamformer/autodiff.hpp"
#include "lamformer/eager_ops.hpp"
#include "lamformer/multi_head.hpp"

namespace lamformer {

// How the second decoder attention is fed. `encoder_queries`: queries and keys from the
// encoder output, values from the decoder stream. `decoder_queries`: queries from
// the decoder stream, keys and values from the encoder output.
enum class CrossWiring { encoder_queries, decoder_queries };

std::string to_string(CrossWiring wiring);
CrossWiring parse_cross_wiring(std::string_view text);

struct ModelConfig {
  std::size_t d_features = 1;
  std::size_t d_model = 8;
  std::size_t N = 1;
  std::size_t n = 8;
  std::size_t m = 2;
  std::size_t h = 1;
  std::size_t d_a = 0;  // 0: d_model / h
  AttentionSpec attention{};
  double slope = 0.01;
  std::uint64_t seed = 0;
  bool positional_encoding = true;
  CrossWiring cross = CrossWiring::encoder_queries;

  std::size_t head_dim() const { return d_a == 0 ? d_model / h : d_a; }
  AttnConfig attn_config() const;
  void validate() const;
};

// PE(i, j) = sin(i / 10000^(j/d)) + cos(i / 10000^(j/d)).
Tensor positional_encoding(std::size_t n, std::size_t d_model);

template <class V>
struct FeedForward {
  V w1{}, b1{}, w2{}, b2{};
};

template <class V>
struct EncoderWeights {
  BasicHeadWeights<V> attn;
  FeedForward<V> ff;
};

template <class V>
struct DecoderWeights {
  BasicHeadWeights<V> self_attn;
  BasicHeadWeights<V> cross_attn;
  FeedForward<V> ff;
};

template <class V>
struct ModelWeights {
  V embed_w{}, embed_b{};
  std::vector<EncoderWeights<V>> encoder;
  std::vector<DecoderWeights<V>> decoder;
  V out_w{}, out_b{};
  V time{};  // m x n; applied as time * Z
};

struct ParamSlot {
  std::string name;
  Tensor::Shape shape;
  std::size_t fan_in = 0;  // 0: bias, zero-initialised
  std::string block;       // embedding, encoder.<i>, decoder.<i>, output, time
};

// Flat parameter order. Every other view of the parameters follows it.
std::vector<ParamSlot> parameter_layout(const ModelConfig& cfg);

template <class V>
ModelWeights<V> unflatten(const ModelConfig& cfg, std::span<const V> flat) {
  std::size_t k = 0;
  auto next = [&]() -> const V& { return flat[k++]; };
  auto heads = [&](BasicHeadWeights<V>& w) {
    for (std::size_t i = 0; i < cfg.h; ++i) {
      w.query.push_back(next());
      w.key.push_back(next());
      w.value.push_back(next());
    }
    w.output = next();
  };
  auto ff = [&](FeedForward<V>& f) {
    f.w1 = next();
    f.b1 = next();
    f.w2 = next();
    f.b2 = next();
  };
  ModelWeights<V> w;
  w.embed_w = next();
  w.embed_b = next();
  w.encoder.resize(cfg.N);
  for (auto& layer : w.encoder) {
    heads(layer.attn);
    ff(layer.ff);
  }
  w.decoder.resize(cfg.N);
  for (auto& layer : w.decoder) {
    heads(layer.self_attn);
    heads(layer.cross_attn);
    ff(layer.ff);
  }
  w.out_w = next();
  w.out_b = next();
  w.time = next();
  if (k != flat.size()) throw ContractError("parameter list does not match the model layout");
  return w;
}

struct LayerContext {
  const AttentionSpec* spec = nullptr;
  double slope = 0.01;
  AttentionCounters* counters = nullptr;
  const AttentionProbe* probe = nullptr;
};

template <class Ops>
typename Ops::Value feed_forward(Ops& ops, const typename Ops::Value& x, const FeedForward<typename Ops::Value>& f,
                                 double slope) {
  const ActivationSpec act{Activation::leaky_relu, slope};
  return ops.affine(ops.affine(x, f.w1, f.b1, act), f.w2, f.b2, act);
}

// out = FF(X + MultiHead(X, X, X)).
template <class Ops>
typename Ops::Value encoder_layer(Ops& ops, const typename Ops::Value& x, const EncoderWeights<typename Ops::Value>& w,
                                  const LayerContext& ctx, std::uint64_t stream) {
  auto attended = multi_head(ops, x, x, x, w.attn, *ctx.spec, stream, ctx.counters, ctx.probe);
  return feed_forward(ops, ops.add(x, attended), w.ff, ctx.slope);
}

template <class Ops>
typename Ops::Value decoder_layer(Ops& ops, const typename Ops::Value& y, const typename Ops::Value& enc,
                                  const DecoderWeights<typename Ops::Value>& w, const LayerContext& ctx,
                                  CrossWiring wiring, std::uint64_t stream) {
  auto self = multi_head(ops, y, y, y, w.self_attn, *ctx.spec, stream, ctx.counters, ctx.probe);
  auto y1 = ops.add(y, self);
  auto cross = wiring == CrossWiring::encoder_queries
                   ? multi_head(ops, enc, enc, y1, w.cross_attn, *ctx.spec, stream + 1, ctx.counters, ctx.probe)
                   : multi_head(ops, y1, enc, enc, w.cross_attn, *ctx.spec, stream + 1, ctx.counters, ctx.probe);
  return feed_forward(ops, ops.add(y1, cross), w.ff, ctx.slope);
}

struct ForwardOptions {
  bool project_time = true;
  AttentionCounters* counters = nullptr;
  const AttentionProbe* probe = nullptr;
};

// Embedding + positional encoding, N encoder layers, N decoder layers fed the
// same embedded window, feature projection back to d_features and finally the
// time projection to m rows.
template <class Ops>
typename Ops::Value model_forward(Ops& ops, const ModelConfig& cfg, const ModelWeights<typename Ops::Value>& w,
                                  const typename Ops::Value& x, const ForwardOptions& opts = {}) {
  const LayerContext ctx{&cfg.attention, cfg.slope, opts.counters, opts.probe};
  auto embedded = ops.affine(x, w.embed_w, w.embed_b, ActivationSpec{});
  if (cfg.positional_encoding) embedded = ops.add_constant(embedded, positional_encoding(cfg.n, cfg.d_model));

  auto enc = embedded;
  for (std::size_t i = 0; i < cfg.N; ++i) enc = encoder_layer(ops, enc, w.encoder[i], ctx, 4 * i);
  auto dec = embedded;
  for (std::size_t i = 0; i < cfg.N; ++i)
    dec = decoder_layer(ops, dec, enc, w.decoder[i], ctx, cfg.cross, 4 * (cfg.N + i));

  auto features = ops.affine(dec, w.out_w, w.out_b, ActivationSpec{});
  if (!opts.project_time) return features;
  return ops.matmul(w.time, features);
}

struct ParameterBreakdown {
  std::vector<std::pair<std::string, std::size_t>> blocks;
  std::size_t total = 0;
};

class ForecastModel {
 public:
  ForecastModel() = default;
  // Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  explicit ForecastModel(ModelConfig cfg);
  ForecastModel(ModelConfig cfg, std::vector<Tensor> params);

  const ModelConfig& config() const { return cfg_; }
  // Attention settings may be swapped after construction (e.g. lam vs oracle).
  AttentionSpec& attention() { return cfg_.attention; }
  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }

  // n x d_features -> m x d_features.
  Tensor forward(const Tensor& x, AttentionCounters* counters = nullptr, const AttentionProbe* probe = nullptr) const;
  // n x d_features before the time projection.
  Tensor forward_sequence(const Tensor& x) const;

  // Records the forward pass on g with parameters registered as ids 0..P-1.
  ad::Var forward_graph(ad::Graph& g, std::span<const ad::Var> params, ad::Var x) const;
  std::vector<ad::Var> register_parameters(ad::Graph& g) const;

  std::size_t count_parameters() const;
  ParameterBreakdown parameter_breakdown() const;

 private:
  void check_input(const Tensor& x) const;

  ModelConfig cfg_;
  std::vector<Tensor> params_;
};

}  // namespace lamformer
