#include "lamformer/model.hpp"

#include <cmath>
#include <map>
#include <random>

namespace lamformer {

std::string to_string(CrossWiring wiring) {
  return wiring == CrossWiring::encoder_queries ? "encoder_queries" : "decoder_queries";
}

CrossWiring parse_cross_wiring(std::string_view text) {
  if (text == "encoder_queries") return CrossWiring::encoder_queries;
  if (text == "decoder_queries") return CrossWiring::decoder_queries;
  throw std::invalid_argument("unknown cross wiring '" + std::string(text) + "' (expected encoder_queries or decoder_queries)");
}

AttnConfig ModelConfig::attn_config() const {
  return {.n = n, .d_q = d_model, .d_v = d_model, .L = attention.window(n), .h = h, .d_a = head_dim()};
}

void ModelConfig::validate() const {
  if (d_features < 1 || d_model < 1 || h < 1) throw ContractError("model widths and head count must be >= 1");
  if (N < 1) throw ContractError("layer count N must be >= 1");
  if (m < 1 || n < m) throw ContractError("need n >= m >= 1, got n=" + std::to_string(n) + ", m=" + std::to_string(m));
  if (head_dim() < 1) throw ContractError("head width d_a resolves to 0 (d_model < h)");
  if (!(slope >= 0.0) || !std::isfinite(slope)) throw ContractError("activation slope must be finite and >= 0");
  attn_config().validate();
}

Tensor positional_encoding(std::size_t n, std::size_t d_model) {
  if (n < 1 || d_model < 1) throw ContractError("positional encoding needs n, d_model >= 1");
  Tensor pe({n, d_model});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d_model; ++j) {
      const double angle =
          static_cast<double>(i) / std::pow(10000.0, static_cast<double>(j) / static_cast<double>(d_model));
      pe(i, j) = std::sin(angle) + std::cos(angle);
    }
  }
  return pe;
}

std::vector<ParamSlot> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model, da = cfg.head_dim();
  std::vector<ParamSlot> slots;
  auto add = [&](std::string block, std::string name, Tensor::Shape shape, std::size_t fan_in) {
    slots.push_back({block + "." + name, std::move(shape), fan_in, std::move(block)});
  };
  auto heads = [&](const std::string& block, const std::string& tag) {
    for (std::size_t i = 0; i < cfg.h; ++i) {
      const std::string head = tag + ".head" + std::to_string(i);
      add(block, head + ".query", {da, d}, d);
      add(block, head + ".key", {da, d}, d);
      add(block, head + ".value", {da, d}, d);
    }
    add(block, tag + ".output", {cfg.h * da, d}, cfg.h * da);
  };
  auto ff = [&](const std::string& block) {
    add(block, "ff1.weight", {d, d}, d);
    add(block, "ff1.bias", {d}, 0);
    add(block, "ff2.weight", {d, d}, d);
    add(block, "ff2.bias", {d}, 0);
  };
  add("embedding", "weight", {cfg.d_features, d}, cfg.d_features);
  add("embedding", "bias", {d}, 0);
  for (std::size_t i = 0; i < cfg.N; ++i) {
    const std::string block = "encoder." + std::to_string(i);
    heads(block, "attn");
    ff(block);
  }
  for (std::size_t i = 0; i < cfg.N; ++i) {
    const std::string block = "decoder." + std::to_string(i);
    heads(block, "self_attn");
    heads(block, "cross_attn");
    ff(block);
  }
  add("output", "weight", {d, cfg.d_features}, d);
  add("output", "bias", {cfg.d_features}, 0);
  add("time", "weight", {cfg.m, cfg.n}, cfg.n);
  return slots;
}

ForecastModel::ForecastModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  std::mt19937_64 rng(cfg_.seed);
  for (const ParamSlot& slot : parameter_layout(cfg_)) {
    if (slot.fan_in == 0) {
      params_.emplace_back(slot.shape);
    } else {
      params_.push_back(uniform_tensor(slot.shape, 1.0 / std::sqrt(static_cast<double>(slot.fan_in)), rng));
    }
  }
}

ForecastModel::ForecastModel(ModelConfig cfg, std::vector<Tensor> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  const auto layout = parameter_layout(cfg_);
  if (layout.size() != params_.size()) {
    throw ContractError("expected " + std::to_string(layout.size()) + " parameter tensors, got " +
                        std::to_string(params_.size()));
  }
  for (std::size_t k = 0; k < layout.size(); ++k) {
    if (layout[k].shape != params_[k].shape()) {
      throw DimensionError("parameter " + layout[k].name + " should be " + shape_string(layout[k].shape) +
                           ", got " + shape_string(params_[k].shape()));
    }
  }
}

void ForecastModel::check_input(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(0) != cfg_.n || x.dim(1) != cfg_.d_features) {
    throw DimensionError("model input should be " + std::to_string(cfg_.n) + "x" + std::to_string(cfg_.d_features) +
                         ", got " + shape_string(x.shape()));
  }
  if (!x.all_finite()) throw NumericError("model input contains non-finite values");
}

Tensor ForecastModel::forward(const Tensor& x, AttentionCounters* counters, const AttentionProbe* probe) const {
  check_input(x);
  EagerOps ops;
  const auto w = unflatten<Tensor>(cfg_, params_);
  return model_forward(ops, cfg_, w, x, {.project_time = true, .counters = counters, .probe = probe});
}

Tensor ForecastModel::forward_sequence(const Tensor& x) const {
  check_input(x);
  EagerOps ops;
  const auto w = unflatten<Tensor>(cfg_, params_);
  return model_forward(ops, cfg_, w, x, {.project_time = false});
}

std::vector<ad::Var> ForecastModel::register_parameters(ad::Graph& g) const {
  std::vector<ad::Var> vars;
  vars.reserve(params_.size());
  for (std::size_t k = 0; k < params_.size(); ++k) vars.push_back(g.parameter(k, params_[k]));
  return vars;
}

ad::Var ForecastModel::forward_graph(ad::Graph& g, std::span<const ad::Var> params, ad::Var x) const {
  check_input(g.value(x));
  ad::GraphOps ops{g};
  const auto w = unflatten<ad::Var>(cfg_, params);
  return model_forward(ops, cfg_, w, x);
}

std::size_t ForecastModel::count_parameters() const {
  std::size_t total = 0;
  for (const Tensor& p : params_) total += p.size();
  return total;
}

ParameterBreakdown ForecastModel::parameter_breakdown() const {
  ParameterBreakdown out;
  const auto layout = parameter_layout(cfg_);
  for (std::size_t k = 0; k < layout.size(); ++k) {
    const std::size_t count = params_[k].size();
    if (out.blocks.empty() || out.blocks.back().first != layout[k].block) out.blocks.emplace_back(layout[k].block, 0);
    out.blocks.back().second += count;
    out.total += count;
  }
  return out;
}

}  // namespace lamformer
