#include "lamformer/cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <sys/resource.h>

#include "lamformer/bench.hpp"
#include "lamformer/checkpoint.hpp"
#include "lamformer/data.hpp"
#include "lamformer/verify.hpp"

namespace lamformer {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::size_t to_size(const std::string& key, std::string_view v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double to_double(const std::string& key, std::string_view v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + std::string(v) + "'");
  }
  return out;
}

bool to_bool(const std::string& key, std::string_view v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + std::string(v) + "'");
}

bool is_preset(const std::string& source) {
  return source == "sines" || source == "trend_season" || source == "ar_noise";
}

Series load_source(const std::string& source, std::size_t length, std::size_t features, std::uint64_t seed,
                   std::ostream& err) {
  if (is_preset(source)) return synth_series(parse_synth_kind(source), length, features, seed);
  CsvReport report;
  Series s = load_csv(source, &report);
  for (const DroppedRow& row : report.dropped) err << source << ":" << row.line << ": dropped (" << row.reason << ")\n";
  return s;
}

int cmd_verify(std::size_t trials, std::uint64_t seed, const std::string& fault, std::ostream& out,
               std::ostream& err) {
  VerifyOptions opts{.trials = trials, .seed = seed};
  if (!fault.empty()) {
    if (fault != "skip-pad-mask") {
      err << "unknown fault '" << fault << "' (available: skip-pad-mask)\n";
      return kExitUsage;
    }
    opts.lam.mask_padding = false;
    out << "fault injected: skip-pad-mask\n";
  }
  const VerifyReport report = run_verify(opts);
  print_verify_report(out, report);
  return report.passed() ? kExitOk : kExitFailure;
}

int cmd_bench(const BenchOptions& opts, const std::string& out_path, std::ostream& out, std::ostream& err) {
  std::ofstream file;
  std::ostream* csv = &out;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) {
      err << "cannot write '" << out_path << "'\n";
      return kExitFailure;
    }
    csv = &file;
  }
  *csv << kBenchHeader << '\n';
  const auto records = run_bench(opts, [&](const BenchRecord& r) {
    *csv << bench_csv_line(r) << '\n';
    csv->flush();
    err << "bench " << r.mechanism << " n=" << r.n << " done\n";
  });
  std::ostream& summary = out_path.empty() ? err : out;
  for (const ScalingFit& fit : fit_scaling(records)) {
    summary << "slope " << fit.mechanism << " = " << std::fixed << std::setprecision(3) << fit.slope
            << std::defaultfloat << " over " << fit.points << " sizes\n";
  }
  rusage usage{};
  if (getrusage(RUSAGE_SELF, &usage) == 0) summary << "peak rss " << usage.ru_maxrss / 1024 << " MiB\n";
  for (const BenchRecord& r : records) {
    summary << "dot_products " << r.mechanism << " n=" << r.n << " L=" << r.L << " : " << r.dot_products << '\n';
  }
  return kExitOk;
}

struct TrainArgs {
  std::string config, data = "sines", out;
  std::size_t length = 20000, features = 3;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  TrainConfig tc = load_train_config(args.config);
  if (args.seed) {
    tc.model.seed = *args.seed;
    tc.train.shuffle_seed = *args.seed;
  }
  const Series raw = load_source(args.data, args.length, args.features, tc.model.seed, err);
  tc.model.d_features = raw.features();
  const WindowedDataset data(raw, {.n = tc.model.n, .m = tc.model.m, .train_stride = tc.stride});
  ForecastModel model(tc.model);

  const std::string curve_path = args.out + ".curve.csv";
  std::ofstream curve(curve_path);
  if (!curve) throw DataError("cannot write '" + curve_path + "'");
  curve << "epoch,train_mse,val_mse,train_mae,val_mae\n" << std::setprecision(17);
  tc.train.on_epoch = [&](const EpochStats& e) {
    curve << e.epoch << "," << e.train_mse << "," << e.val_mse << "," << e.train_mae << "," << e.val_mae << '\n';
    curve.flush();
    err << "epoch " << e.epoch << " train_mse=" << e.train_mse << " val_mse=" << e.val_mse << '\n';
  };

  out << "parameters " << model.count_parameters() << "  windows train=" << data.size(Split::train)
      << " val=" << data.size(Split::validation) << " test=" << data.size(Split::test) << '\n';
  TrainReport report;
  if (tc.train.epochs > 0) report = train(model, data, tc.train);
  save_checkpoint(args.out, model, &data.scaler(), data.names());
  write_dataset_manifest(args.out + ".manifest.txt", data);

  out << "epochs run " << report.curve.size() << ", best epoch " << report.best_epoch
      << (report.early_stopped ? " (early stop)" : "") << '\n';
  if (data.size(Split::test) > 0) {
    const Metrics test = evaluate(model, data, Split::test);
    out << "test mse " << test.mse << "  mae " << test.mae << "  last-value baseline mse "
        << last_value_baseline_mse(data, Split::test) << '\n';
  }
  out << "checkpoint " << args.out << '\n';
  return kExitOk;
}

struct BandmassArgs {
  std::string checkpoint, data, out;
  std::size_t n = 96, d_model = 8, h = 2, N = 1, features = 3;
  std::vector<std::size_t> L_list;
  std::uint64_t seed = 0;
};

int cmd_bandmass(const BandmassArgs& args, std::ostream& out, std::ostream& err) {
  std::optional<Checkpoint> ck;
  ModelConfig cfg;
  if (!args.checkpoint.empty()) {
    ck = load_checkpoint(args.checkpoint);
    cfg = ck->model.config();
  } else {
    cfg = ModelConfig{.d_features = args.features, .d_model = args.d_model, .N = args.N, .n = args.n,
                      .m = std::min<std::size_t>(args.n, 1), .h = args.h};
    cfg.seed = args.seed;
  }
  cfg.attention.kind = AttentionKind::full;
  const ForecastModel model = ck ? ForecastModel(cfg, ck->model.parameters()) : ForecastModel(cfg);

  Tensor x({cfg.n, cfg.d_features});
  if (!args.data.empty()) {
    const Series raw = load_source(args.data, std::max<std::size_t>(cfg.n, 1000), cfg.d_features, args.seed, err);
    if (raw.features() != cfg.d_features || raw.length() < cfg.n) {
      throw DataError("bandmass input needs at least " + std::to_string(cfg.n) + " rows of " +
                      std::to_string(cfg.d_features) + " features");
    }
    std::vector<std::int64_t> rows(cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) rows[i] = static_cast<std::int64_t>(i);
    x = gather_rows_padded(raw.values, rows, 0.0);
    if (ck && ck->scaler) x = ck->scaler->standardize(x);
  } else {
    std::mt19937_64 rng(args.seed);
    std::normal_distribution<double> gauss;
    for (double& v : x.data()) v = gauss(rng);
  }

  std::vector<std::size_t> Ls = args.L_list;
  if (Ls.empty()) {
    for (std::size_t L = 1; L < cfg.n; L *= 2) Ls.push_back(L);
    Ls.push_back(cfg.n);
  }
  for (std::size_t L : Ls) {
    if (L < 1 || L > cfg.n) {
      err << "L=" << L << " outside [1, " << cfg.n << "]\n";
      return kExitUsage;
    }
  }

  std::vector<std::string> block_names;
  for (std::size_t i = 0; i < cfg.N; ++i) block_names.push_back("encoder." + std::to_string(i) + ".attn");
  for (std::size_t i = 0; i < cfg.N; ++i) {
    block_names.push_back("decoder." + std::to_string(i) + ".self_attn");
    block_names.push_back("decoder." + std::to_string(i) + ".cross_attn");
  }

  std::ofstream file;
  std::ostream* csv = &out;
  if (!args.out.empty()) {
    file.open(args.out);
    if (!file) throw DataError("cannot write '" + args.out + "'");
    csv = &file;
  }
  *csv << "block,head,L,band_mass,last_row_mass\n" << std::setprecision(17);
  std::size_t call = 0;
  const AttentionProbe probe = [&](std::size_t head, const Tensor& q, const Tensor& k) {
    if (head == 0) ++call;
    const std::string& block = block_names.at(call - 1);
    for (std::size_t L : Ls) {
      const auto rows = attention_band_mass_rows(q, k, L);
      double mean = 0.0;
      for (double r : rows) mean += r;
      mean /= static_cast<double>(rows.size());
      *csv << block << "," << head << "," << L << "," << mean << "," << rows.back() << '\n';
    }
  };
  model.forward(x, nullptr, &probe);
  return kExitOk;
}

int cmd_forecast(const std::string& checkpoint, const std::string& input, const std::string& output,
                 std::ostream& out, std::ostream& err) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const ModelConfig& cfg = ck.model.config();
  CsvReport report;
  const Series raw = load_csv(input, &report);
  for (const DroppedRow& row : report.dropped) err << input << ":" << row.line << ": dropped (" << row.reason << ")\n";
  if (raw.features() != cfg.d_features) {
    throw DataError("checkpoint expects " + std::to_string(cfg.d_features) + " features, '" + input + "' has " +
                    std::to_string(raw.features()));
  }
  if (raw.length() < cfg.n) {
    throw DataError("'" + input + "' has " + std::to_string(raw.length()) + " usable rows, need " +
                    std::to_string(cfg.n));
  }
  std::vector<std::int64_t> rows(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) rows[i] = static_cast<std::int64_t>(raw.length() - cfg.n + i);
  Tensor x = gather_rows_padded(raw.values, rows, 0.0);
  if (ck.scaler) x = ck.scaler->standardize(x);
  Tensor pred = ck.model.forward(x);
  if (ck.scaler) pred = ck.scaler->destandardize(pred);
  const Series forecast{raw.names, std::move(pred)};
  if (output.empty()) {
    for (std::size_t f = 0; f < forecast.names.size(); ++f) out << (f ? "," : "") << forecast.names[f];
    out << '\n' << std::setprecision(17);
    for (std::size_t t = 0; t < forecast.length(); ++t) {
      for (std::size_t f = 0; f < forecast.features(); ++f) out << (f ? "," : "") << forecast.values(t, f);
      out << '\n';
    }
  } else {
    write_csv(output, forecast);
    out << "wrote " << cfg.m << " forecast rows to " << output << '\n';
  }
  return kExitOk;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig tc;
  tc.model.n = 96;
  tc.model.m = 24;
  tc.model.h = 2;
  tc.model.attention.kind = AttentionKind::lam;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, bool> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const std::size_t eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + " is not key=value: '" + std::string(body) + "'");
    }
    const std::string key(trim(body.substr(0, eq)));
    const std::string_view value = trim(body.substr(eq + 1));
    if (seen[key]) throw ConfigError("config key '" + key + "' given twice");
    seen[key] = true;

    if (key == "kind") {
      try {
        tc.model.attention.kind = parse_attention_kind(value);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("config key 'kind': " + std::string(e.what()));
      }
    } else if (key == "n") {
      tc.model.n = to_size(key, value);
    } else if (key == "m") {
      tc.model.m = to_size(key, value);
    } else if (key == "d_model") {
      tc.model.d_model = to_size(key, value);
    } else if (key == "N") {
      tc.model.N = to_size(key, value);
    } else if (key == "h") {
      tc.model.h = to_size(key, value);
    } else if (key == "d_a") {
      tc.model.d_a = to_size(key, value);
    } else if (key == "L") {
      tc.model.attention.L = to_size(key, value);
    } else if (key == "l_rule") {
      try {
        tc.model.attention.band_rule = BandRule::parse(std::string(value));
      } catch (const std::invalid_argument& e) {
        throw ConfigError("config key 'l_rule': " + std::string(e.what()));
      }
    } else if (key == "lr") {
      tc.train.adam.lr = to_double(key, value);
    } else if (key == "epochs") {
      tc.train.epochs = to_size(key, value);
    } else if (key == "batch") {
      tc.train.batch = to_size(key, value);
    } else if (key == "seed") {
      tc.model.seed = to_size(key, value);
      tc.train.shuffle_seed = tc.model.seed;
    } else if (key == "stride") {
      tc.stride = to_size(key, value);
    } else if (key == "alpha") {
      tc.model.slope = to_double(key, value);
    } else if (key == "patience") {
      tc.train.patience = to_size(key, value);
    } else if (key == "cross") {
      try {
        tc.model.cross = parse_cross_wiring(value);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("config key 'cross': " + std::string(e.what()));
      }
    } else if (key == "positional_encoding") {
      tc.model.positional_encoding = to_bool(key, value);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  if (tc.train.batch < 1) throw ConfigError("config key 'batch' must be >= 1");
  if (tc.stride < 1) throw ConfigError("config key 'stride' must be >= 1");
  if (!(tc.train.adam.lr >= 0.0)) throw ConfigError("config key 'lr' must be >= 0");
  try {
    tc.model.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("invalid model config: ") + e.what());
  }
  return tc;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_train_config(buf.str());
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Blocked local attention: verification, benchmarks and toy forecasting"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;

  auto* verify = app.add_subcommand("verify", "Oracle, counter, equivariance and gradient suites");
  std::size_t trials = 200;
  std::string fault;
  verify->add_option("--trials", trials, "Randomised cases per suite")->capture_default_str();
  verify->add_option("--seed", seed, "Random seed")->capture_default_str();
  verify->add_option("--inject-fault", fault, "Test-only fault (skip-pad-mask)");

  auto* bench = app.add_subcommand("bench", "Time full, local and sampled attention across n");
  BenchOptions bopts;
  std::string bench_out, l_rule = "fixed:32";
  std::vector<std::string> mechanisms{"full", "lam", "prob"};
  bench->add_option("--n-list", bopts.n_list, "Ascending sequence lengths")->delimiter(',')->capture_default_str();
  bench->add_option("--mechanisms", mechanisms, "Mechanisms to time")->delimiter(',')->capture_default_str();
  bench->add_option("--l-rule", l_rule, "4ceil, ceil4 or fixed:<k>")->capture_default_str();
  bench->add_option("--repeats", bopts.repeats, "Timed repetitions per cell (>= 5)")->capture_default_str();
  bench->add_option("--d-model", bopts.d_model, "Feature width of Q, K, V")->capture_default_str();
  bench->add_option("--seed", seed, "Random seed")->capture_default_str();
  bench->add_option("--out", bench_out, "CSV output path (stdout when omitted)");

  auto* trainc = app.add_subcommand("train", "Train a forecaster from a key=value config");
  TrainArgs targs;
  std::uint64_t train_seed = 0;
  trainc->add_option("--config", targs.config, "Config file")->required();
  trainc->add_option("--data", targs.data, "Preset (sines, trend_season, ar_noise) or CSV path")->capture_default_str();
  trainc->add_option("--length", targs.length, "Preset series length")->capture_default_str();
  trainc->add_option("--features", targs.features, "Preset feature count")->capture_default_str();
  auto* train_seed_opt = trainc->add_option("--seed", train_seed, "Overrides the config seed");
  trainc->add_option("--out", targs.out, "Checkpoint path")->required();

  auto* bandmass = app.add_subcommand("bandmass", "Attention mass inside the local band per layer and head");
  BandmassArgs bargs;
  bandmass->add_option("--checkpoint", bargs.checkpoint, "Trained checkpoint (random weights when omitted)");
  bandmass->add_option("--data", bargs.data, "Preset or CSV supplying the input window");
  bandmass->add_option("--n", bargs.n, "Window length for random weights")->capture_default_str();
  bandmass->add_option("--d-model", bargs.d_model, "Width for random weights")->capture_default_str();
  bandmass->add_option("--heads", bargs.h, "Heads for random weights")->capture_default_str();
  bandmass->add_option("--layers", bargs.N, "Layer count for random weights")->capture_default_str();
  bandmass->add_option("--features", bargs.features, "Input features for random weights")->capture_default_str();
  bandmass->add_option("--L-list", bargs.L_list, "Band sizes")->delimiter(',');
  bandmass->add_option("--seed", seed, "Random seed")->capture_default_str();
  bandmass->add_option("--out", bargs.out, "CSV output path (stdout when omitted)");

  auto* forecast = app.add_subcommand("forecast", "Forecast m steps after the last n rows of a CSV");
  std::string ck_path, in_path, fc_out;
  forecast->add_option("--checkpoint", ck_path, "Checkpoint file")->required();
  forecast->add_option("--input", in_path, "Input CSV")->required();
  forecast->add_option("--out", fc_out, "Output CSV (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*verify) return cmd_verify(trials, seed, fault, out, err);
    if (*bench) {
      bopts.seed = seed;
      bopts.l_rule = BandRule::parse(l_rule);
      bopts.mechanisms.clear();
      for (const std::string& m : mechanisms) bopts.mechanisms.push_back(parse_attention_kind(m));
      if (bopts.repeats < 5) throw std::invalid_argument("--repeats must be at least 5");
      if (!std::is_sorted(bopts.n_list.begin(), bopts.n_list.end())) {
        throw std::invalid_argument("--n-list must be ascending");
      }
      return cmd_bench(bopts, bench_out, out, err);
    }
    if (*trainc) {
      if (*train_seed_opt) targs.seed = train_seed;
      return cmd_train(targs, out, err);
    }
    if (*bandmass) {
      bargs.seed = seed;
      return cmd_bandmass(bargs, out, err);
    }
    if (*forecast) return cmd_forecast(ck_path, in_path, fc_out, out, err);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::logic_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace lamformer
