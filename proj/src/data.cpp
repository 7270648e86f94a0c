#include "lamformer/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

namespace lamformer {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::optional<double> parse_number(std::string_view cell) {
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc{} || ptr != cell.data() + cell.size()) return std::nullopt;
  return value;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<std::string> default_names(std::size_t d) {
  std::vector<std::string> names;
  for (std::size_t f = 0; f < d; ++f) names.push_back("x" + std::to_string(f));
  return names;
}

std::size_t share(std::size_t total, double fraction) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(total) * fraction + 1e-9));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + " shapes differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  if (a.empty()) throw DimensionError(std::string(what) + " of empty tensors");
}

}  // namespace

std::string to_string(SynthKind kind) {
  switch (kind) {
    case SynthKind::sines: return "sines";
    case SynthKind::trend_season: return "trend_season";
    case SynthKind::ar_noise: return "ar_noise";
  }
  return "?";
}

SynthKind parse_synth_kind(std::string_view text) {
  if (text == "sines") return SynthKind::sines;
  if (text == "trend_season") return SynthKind::trend_season;
  if (text == "ar_noise") return SynthKind::ar_noise;
  throw std::invalid_argument("unknown synthetic preset '" + std::string(text) +
                              "' (expected sines, trend_season or ar_noise)");
}

std::vector<SineTerm> sine_terms(std::size_t feature, std::uint64_t seed) {
  std::mt19937_64 rng(mix(seed, feature));
  std::uniform_real_distribution<double> jitter(0.8, 1.2);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  constexpr double base_amplitude[3] = {1.0, 0.6, 0.35};
  std::vector<SineTerm> terms;
  for (std::size_t k = 0; k < 3; ++k) {
    SineTerm t;
    t.amplitude = base_amplitude[k] * jitter(rng);
    t.period = kSinePeriods[k];
    t.phase = phase(rng);
    terms.push_back(t);
  }
  return terms;
}

Series synth_series(SynthKind kind, std::size_t length, std::size_t d, std::uint64_t seed,
                    const SynthOptions& opts) {
  if (length < 1 || d < 1) throw ContractError("synth_series needs length >= 1 and d >= 1");
  Series out{default_names(d), Tensor({length, d})};
  std::mt19937_64 noise_rng(mix(seed, 1u << 20));
  std::normal_distribution<double> gauss(0.0, 1.0);

  if (kind == SynthKind::ar_noise) {
    constexpr double coef = 0.8;
    for (std::size_t f = 0; f < d; ++f) out.values(0, f) = gauss(noise_rng) / std::sqrt(1.0 - coef * coef);
    for (std::size_t t = 1; t < length; ++t)
      for (std::size_t f = 0; f < d; ++f) out.values(t, f) = coef * out.values(t - 1, f) + gauss(noise_rng);
    return out;
  }

  std::vector<std::vector<SineTerm>> terms;
  std::vector<double> drift(d, 0.0);
  std::mt19937_64 drift_rng(mix(seed, 1u << 21));
  std::uniform_real_distribution<double> drift_dist(0.5, 1.5);
  for (std::size_t f = 0; f < d; ++f) {
    terms.push_back(sine_terms(f, seed));
    if (kind == SynthKind::trend_season) drift[f] = 3.0 * drift_dist(drift_rng) / static_cast<double>(length);
  }
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t f = 0; f < d; ++f) {
      double x = drift[f] * static_cast<double>(t);
      for (const SineTerm& term : terms[f])
        x += term.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / term.period + term.phase);
      if (opts.noise > 0.0) x += opts.noise * gauss(noise_rng);
      out.values(t, f) = x;
    }
  }
  return out;
}

Series load_csv(const std::string& path, CsvReport* report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read CSV file '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV file '" + path + "' is empty");
  std::vector<std::string> header;
  for (std::string_view cell : split_cells(line)) header.emplace_back(cell);

  CsvReport local;
  CsvReport& rep = report ? *report : local;
  rep = CsvReport{};

  std::vector<double> values;
  std::size_t line_no = 1;
  std::size_t first = 0;
  bool decided = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_cells(line);
    if (cells.size() != header.size()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " cells, found " + std::to_string(cells.size()));
    }
    if (!decided) {
      rep.timestamp_column = !parse_number(cells[0]).has_value() && header.size() > 0;
      first = rep.timestamp_column ? 1 : 0;
      decided = true;
      if (first >= header.size()) throw DataError("CSV file '" + path + "' has no numeric columns");
    }
    ++rep.rows_read;
    std::vector<double> row;
    std::string reason;
    for (std::size_t c = first; c < cells.size(); ++c) {
      const auto v = parse_number(cells[c]);
      if (!v) {
        reason = "non-numeric cell '" + std::string(cells[c]) + "' in column " + header[c];
        break;
      }
      if (!std::isfinite(*v)) {
        reason = "non-finite cell '" + std::string(cells[c]) + "' in column " + header[c];
        break;
      }
      row.push_back(*v);
    }
    if (!reason.empty()) {
      rep.dropped.push_back({line_no, std::move(reason)});
      continue;
    }
    values.insert(values.end(), row.begin(), row.end());
  }
  if (!decided) throw DataError("CSV file '" + path + "' has no data rows");
  const std::size_t d = header.size() - first;
  if (values.empty()) throw DataError("CSV file '" + path + "' has no usable rows");

  Series out;
  for (std::size_t c = first; c < header.size(); ++c) out.names.emplace_back(header[c]);
  const std::size_t rows = values.size() / d;
  out.values = Tensor({rows, d}, std::move(values));
  return out;
}

void write_csv(const std::string& path, const Series& series) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write CSV file '" + path + "'");
  for (std::size_t f = 0; f < series.names.size(); ++f) out << (f ? "," : "") << series.names[f];
  out << '\n' << std::setprecision(17);
  for (std::size_t t = 0; t < series.length(); ++t) {
    for (std::size_t f = 0; f < series.features(); ++f) out << (f ? "," : "") << series.values(t, f);
    out << '\n';
  }
  if (!out) throw DataError("failed writing CSV file '" + path + "'");
}

Scaler Scaler::fit(const Tensor& values, std::size_t begin, std::size_t end) {
  if (values.rank() != 2 || end <= begin || end > values.dim(0)) {
    throw ContractError("scaler needs a non-empty row range inside the series");
  }
  const std::size_t d = values.dim(1);
  const auto count = static_cast<double>(end - begin);
  Scaler s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t t = begin; t < end; ++t)
    for (std::size_t f = 0; f < d; ++f) s.mean[f] += values(t, f);
  for (double& mu : s.mean) mu /= count;
  for (std::size_t t = begin; t < end; ++t)
    for (std::size_t f = 0; f < d; ++f) {
      const double dev = values(t, f) - s.mean[f];
      s.stddev[f] += dev * dev;
    }
  for (std::size_t f = 0; f < d; ++f) {
    s.stddev[f] = std::sqrt(s.stddev[f] / count);
    if (!(s.stddev[f] > 1e-12 * (1.0 + std::abs(s.mean[f])))) {
      throw DataError("feature " + std::to_string(f) + " has zero variance on the training split");
    }
  }
  return s;
}

Tensor Scaler::standardize(const Tensor& values) const {
  if (values.rank() != 2 || values.dim(1) != mean.size()) {
    throw DimensionError("scaler has " + std::to_string(mean.size()) + " features, data is " +
                         shape_string(values.shape()));
  }
  Tensor out = values;
  for (std::size_t t = 0; t < out.dim(0); ++t)
    for (std::size_t f = 0; f < out.dim(1); ++f) out(t, f) = (out(t, f) - mean[f]) / stddev[f];
  return out;
}

Tensor Scaler::destandardize(const Tensor& values) const {
  if (values.rank() != 2 || values.dim(1) != mean.size()) {
    throw DimensionError("scaler has " + std::to_string(mean.size()) + " features, data is " +
                         shape_string(values.shape()));
  }
  Tensor out = values;
  for (std::size_t t = 0; t < out.dim(0); ++t)
    for (std::size_t f = 0; f < out.dim(1); ++f) out(t, f) = out(t, f) * stddev[f] + mean[f];
  return out;
}

std::size_t window_count(std::size_t length, std::size_t n, std::size_t m, std::size_t stride) {
  if (stride < 1) throw ContractError("stride must be >= 1");
  if (length < n + m) return 0;
  return (length - n - m) / stride + 1;
}

WindowedDataset::WindowedDataset(const Series& raw, const WindowOptions& opts)
    : n_(opts.n),
      m_(opts.m),
      train_stride_(opts.train_stride),
      eval_stride_(opts.eval_stride == 0 ? opts.m : opts.eval_stride),
      fractions_(opts.fractions) {
  if (n_ < 1 || m_ < 1) throw ContractError("window lengths n and m must be >= 1");
  if (train_stride_ < 1) throw ContractError("stride must be >= 1");
  if (!(fractions_.train > 0.0 && fractions_.train <= 1.0) ||
      !(fractions_.validation >= 0.0 && fractions_.validation < 1.0)) {
    throw ContractError("split fractions need 0 < train <= 1 and 0 <= validation < 1");
  }
  const std::size_t len = raw.length();
  if (len < n_ + m_) {
    throw DataError("series of length " + std::to_string(len) + " is too short for n + m = " +
                    std::to_string(n_ + m_));
  }
  const std::size_t train_end = share(len, fractions_.train);
  const std::size_t val_len = share(train_end, fractions_.validation);
  ranges_[0] = {0, train_end - val_len};
  ranges_[1] = {train_end - val_len, train_end};
  ranges_[2] = {train_end, len};
  if (ranges_[0].length() == 0) throw DataError("training split is empty");

  scaler_ = Scaler::fit(raw.values, ranges_[0].begin, ranges_[0].end);
  values_ = scaler_.standardize(raw.values);
  names_ = raw.names.size() == raw.features() ? raw.names : default_names(raw.features());

  for (int k = 0; k < 3; ++k) {
    const std::size_t stride = k == 0 ? train_stride_ : eval_stride_;
    const std::size_t count = window_count(ranges_[k].length(), n_, m_, stride);
    for (std::size_t w = 0; w < count; ++w) starts_[k].push_back(ranges_[k].begin + w * stride);
  }
}

const SplitRange& WindowedDataset::range(Split split) const { return ranges_[static_cast<int>(split)]; }

const std::vector<std::size_t>& WindowedDataset::starts(Split split) const {
  return starts_[static_cast<int>(split)];
}

Tensor WindowedDataset::input(std::size_t start) const {
  std::vector<std::int64_t> rows(n_);
  for (std::size_t i = 0; i < n_; ++i) rows[i] = static_cast<std::int64_t>(start + i);
  return gather_rows_padded(values_, rows, 0.0);
}

Tensor WindowedDataset::target(std::size_t start) const {
  std::vector<std::int64_t> rows(m_);
  for (std::size_t i = 0; i < m_; ++i) rows[i] = static_cast<std::int64_t>(start + n_ + i);
  return gather_rows_padded(values_, rows, 0.0);
}

WindowedDataset standardize_split_window(const Series& raw, const WindowOptions& opts) {
  return WindowedDataset(raw, opts);
}

double mse(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "mse");
  double total = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double e = pred[k] - target[k];
    total += e * e;
  }
  return total / static_cast<double>(pred.size());
}

double mae(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "mae");
  double total = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) total += std::abs(pred[k] - target[k]);
  return total / static_cast<double>(pred.size());
}

Tensor last_value_forecast(const Tensor& input, std::size_t m) {
  if (input.rank() != 2 || input.dim(0) == 0) throw DimensionError("last-value forecast needs an n x d input");
  const std::vector<std::int64_t> rows(m, static_cast<std::int64_t>(input.dim(0) - 1));
  return gather_rows_padded(input, rows, 0.0);
}

double last_value_baseline_mse(const WindowedDataset& data, Split split) {
  const auto& starts = data.starts(split);
  if (starts.empty()) throw DataError("split has no windows");
  double total = 0.0;
  for (std::size_t s : starts) total += mse(last_value_forecast(data.input(s), data.m()), data.target(s));
  return total / static_cast<double>(starts.size());
}

void write_dataset_manifest(const std::string& path, const WindowedDataset& data) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest '" + path + "'");
  out << std::setprecision(17);
  out << "n=" << data.n() << "\n";
  out << "m=" << data.m() << "\n";
  out << "stride=" << data.train_stride() << "\n";
  out << "eval_stride=" << data.eval_stride() << "\n";
  out << "fractions=" << data.fractions().train << "," << data.fractions().validation << "\n";
  out << "features=";
  for (std::size_t f = 0; f < data.names().size(); ++f) out << (f ? "," : "") << data.names()[f];
  out << "\nscaler_mean=";
  for (std::size_t f = 0; f < data.scaler().mean.size(); ++f) out << (f ? "," : "") << data.scaler().mean[f];
  out << "\nscaler_std=";
  for (std::size_t f = 0; f < data.scaler().stddev.size(); ++f) out << (f ? "," : "") << data.scaler().stddev[f];
  out << "\n";
}

}  // namespace lamformer
