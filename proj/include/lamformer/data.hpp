#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lamformer/tensor.hpp"

namespace lamformer {

// A multivariate series: values is length x d, one row per time step.
struct Series {
  std::vector<std::string> names;
  Tensor values;

  std::size_t length() const { return values.empty() ? 0 : values.dim(0); }
  std::size_t features() const { return values.empty() ? 0 : values.dim(1); }
};

enum class SynthKind { sines, trend_season, ar_noise };

std::string to_string(SynthKind kind);
SynthKind parse_synth_kind(std::string_view text);

struct SynthOptions {
  double noise = 0.2;
};

// One sinusoid a*sin(2*pi*t/period + phase) of a sines feature.
struct SineTerm {
  double amplitude = 0.0;
  double period = 1.0;
  double phase = 0.0;
};

// Periods shared by every feature of the sine presets; the series repeats
// with period kSinePeriodLcm when noise is zero.
inline constexpr double kSinePeriods[3] = {24.0, 40.0, 60.0};
inline constexpr std::size_t kSinePeriodLcm = 120;

// The three terms of feature f for a seed (what synth_series draws).
std::vector<SineTerm> sine_terms(std::size_t feature, std::uint64_t seed);

Series synth_series(SynthKind kind, std::size_t length, std::size_t d, std::uint64_t seed,
                    const SynthOptions& opts = {});

struct DroppedRow {
  std::size_t line = 0;  // 1-based, header is line 1
  std::string reason;
};

struct CsvReport {
  bool timestamp_column = false;
  std::size_t rows_read = 0;
  std::vector<DroppedRow> dropped;
};

// Comma separated, one header row. A first column whose first data cell is
// not a number is treated as a timestamp and excluded. Rows containing a
// non-numeric or non-finite cell are dropped and listed in the report.
Series load_csv(const std::string& path, CsvReport* report = nullptr);

void write_csv(const std::string& path, const Series& series);

// Per-feature affine standardisation.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> stddev;

  // Population statistics of rows [begin, end). Throws DataError naming the
  // first feature with zero variance.
  static Scaler fit(const Tensor& values, std::size_t begin, std::size_t end);

  Tensor standardize(const Tensor& values) const;
  Tensor destandardize(const Tensor& values) const;
};

// Chronological split: the first `train` share of the series is training
// data, of which the last `validation` share is held out; the rest is test.
struct SplitFractions {
  double train = 0.7;
  double validation = 0.15;
};

enum class Split { train, validation, test };

struct SplitRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - begin; }
};

// floor((length - n - m) / stride) + 1, or 0 when length < n + m.
std::size_t window_count(std::size_t length, std::size_t n, std::size_t m, std::size_t stride);

struct WindowOptions {
  std::size_t n = 96;
  std::size_t m = 24;
  std::size_t train_stride = 1;
  std::size_t eval_stride = 0;  // 0: use m
  SplitFractions fractions{};
};

// Standardised series with window start offsets per split. Windows never
// cross a split boundary.
class WindowedDataset {
 public:
  WindowedDataset() = default;
  WindowedDataset(const Series& raw, const WindowOptions& opts);

  std::size_t n() const { return n_; }
  std::size_t m() const { return m_; }
  std::size_t features() const { return values_.empty() ? 0 : values_.dim(1); }
  std::size_t train_stride() const { return train_stride_; }
  std::size_t eval_stride() const { return eval_stride_; }
  const SplitFractions& fractions() const { return fractions_; }
  const Scaler& scaler() const { return scaler_; }
  const std::vector<std::string>& names() const { return names_; }
  const Tensor& values() const { return values_; }

  const SplitRange& range(Split split) const;
  const std::vector<std::size_t>& starts(Split split) const;
  std::size_t size(Split split) const { return starts(split).size(); }

  // n x d input and m x d target of the window starting at row `start`.
  Tensor input(std::size_t start) const;
  Tensor target(std::size_t start) const;

 private:
  std::size_t n_ = 0, m_ = 0, train_stride_ = 1, eval_stride_ = 1;
  SplitFractions fractions_{};
  Scaler scaler_;
  std::vector<std::string> names_;
  Tensor values_;
  SplitRange ranges_[3];
  std::vector<std::size_t> starts_[3];
};

WindowedDataset standardize_split_window(const Series& raw, const WindowOptions& opts);

double mse(const Tensor& pred, const Tensor& target);
double mae(const Tensor& pred, const Tensor& target);

// Forecast that repeats the last input row m times.
Tensor last_value_forecast(const Tensor& input, std::size_t m);

// Mean last-value-repeat MSE over a split's windows.
double last_value_baseline_mse(const WindowedDataset& data, Split split);

// Plain-text key=value description of the windowing and scaler.
void write_dataset_manifest(const std::string& path, const WindowedDataset& data);

}  // namespace lamformer
