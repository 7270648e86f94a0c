#include "lamformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

namespace lamformer {

namespace {

constexpr char kMagic[8] = {'L', 'A', 'M', 'F', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

using nlohmann::json;

json spec_to_json(const AttentionSpec& spec) {
  return {{"kind", to_string(spec.kind)},
          {"L", spec.L},
          {"band_rule", spec.band_rule.to_string()},
          {"band_log_base", spec.band_rule.base == LogBase::two ? "2" : "e"},
          {"mask_padding", spec.lam.mask_padding},
          {"prob_seed", spec.prob.seed},
          {"prob_factor", spec.prob.factor},
          {"prob_log_base", spec.prob.base == LogBase::two ? "2" : "e"}};
}

AttentionSpec spec_from_json(const json& j) {
  AttentionSpec spec;
  spec.kind = parse_attention_kind(j.at("kind").get<std::string>());
  spec.L = j.at("L").get<std::size_t>();
  spec.band_rule = BandRule::parse(j.at("band_rule").get<std::string>());
  spec.band_rule.base = j.at("band_log_base").get<std::string>() == "2" ? LogBase::two : LogBase::natural;
  spec.lam.mask_padding = j.at("mask_padding").get<bool>();
  spec.prob.seed = j.at("prob_seed").get<std::uint64_t>();
  spec.prob.factor = j.at("prob_factor").get<decltype(spec.prob.factor)>();
  spec.prob.base = j.at("prob_log_base").get<std::string>() == "2" ? LogBase::two : LogBase::natural;
  return spec;
}

json config_to_json(const ModelConfig& c) {
  return {{"d_features", c.d_features}, {"d_model", c.d_model},  {"N", c.N},
          {"n", c.n},                   {"m", c.m},              {"h", c.h},
          {"d_a", c.d_a},               {"slope", c.slope},      {"seed", c.seed},
          {"positional_encoding", c.positional_encoding},        {"cross", to_string(c.cross)},
          {"attention", spec_to_json(c.attention)}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d_features = j.at("d_features").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.N = j.at("N").get<std::size_t>();
  c.n = j.at("n").get<std::size_t>();
  c.m = j.at("m").get<std::size_t>();
  c.h = j.at("h").get<std::size_t>();
  c.d_a = j.at("d_a").get<std::size_t>();
  c.slope = j.at("slope").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.positional_encoding = j.at("positional_encoding").get<bool>();
  c.cross = parse_cross_wiring(j.at("cross").get<std::string>());
  c.attention = spec_from_json(j.at("attention"));
  return c;
}

template <class T>
void write_pod(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in, const std::string& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw DataError("truncated checkpoint '" + path + "'");
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const ForecastModel& model, const Scaler* scaler,
                     const std::vector<std::string>& feature_names) {
  const auto layout = parameter_layout(model.config());
  json manifest;
  manifest["config"] = config_to_json(model.config());
  manifest["parameters"] = json::array();
  for (std::size_t k = 0; k < layout.size(); ++k)
    manifest["parameters"].push_back({{"name", layout[k].name}, {"shape", model.parameters()[k].shape()}});
  manifest["feature_names"] = feature_names;
  if (scaler) manifest["scaler"] = {{"mean", scaler->mean}, {"std", scaler->stddev}};
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, sizeof kMagic);
  write_pod(out, kCheckpointVersion);
  write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Tensor& p : model.parameters())
    out.write(reinterpret_cast<const char*>(p.data().data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw DataError("'" + path + "' is not a lamformer checkpoint");
  }
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint '" + path + "' has unsupported version " + std::to_string(version));
  }
  const auto length = read_pod<std::uint64_t>(in, path);
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw DataError("truncated checkpoint '" + path + "'");

  try {
    const json manifest = json::parse(text);
    const ModelConfig cfg = config_from_json(manifest.at("config"));
    std::vector<Tensor> params;
    for (const json& entry : manifest.at("parameters")) {
      Tensor t(entry.at("shape").get<Tensor::Shape>());
      if (!in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
        throw DataError("truncated checkpoint '" + path + "'");
      }
      params.push_back(std::move(t));
    }
    Checkpoint ck{ForecastModel(cfg, std::move(params)), std::nullopt,
                  manifest.value("feature_names", std::vector<std::string>{})};
    if (manifest.contains("scaler")) {
      ck.scaler = Scaler{manifest["scaler"].at("mean").get<std::vector<double>>(),
                         manifest["scaler"].at("std").get<std::vector<double>>()};
    }
    return ck;
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint manifest in '" + path + "': " + e.what());
  }
}

}  // namespace lamformer
