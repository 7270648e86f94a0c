#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "lamformer/data.hpp"
#include "lamformer/errors.hpp"
#include "test_util.hpp"

namespace lamformer {
namespace {

class TempFile {
 public:
  explicit TempFile(const std::string& name, const std::string& content = "")
      : path_((std::filesystem::temp_directory_path() / name).string()) {
    if (!content.empty()) std::ofstream(path_) << content;
  }
  ~TempFile() { std::filesystem::remove(path_); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

TEST(Synth, SameSeedSameSeries) {
  for (SynthKind kind : {SynthKind::sines, SynthKind::trend_season, SynthKind::ar_noise}) {
    const Series a = synth_series(kind, 200, 3, 11), b = synth_series(kind, 200, 3, 11);
    EXPECT_EQ(a.values, b.values) << to_string(kind);
    EXPECT_NE(a.values, synth_series(kind, 200, 3, 12).values) << to_string(kind);
  }
}

TEST(Synth, SingleSample) {
  const Series s = synth_series(SynthKind::sines, 1, 1, 0);
  EXPECT_EQ(s.values.shape(), (Tensor::Shape{1, 1}));
  EXPECT_EQ(s.names.size(), 1u);
  EXPECT_THROW(synth_series(SynthKind::sines, 0, 1, 0), ContractError);
}

TEST(Synth, NoiseFreeSinesFollowTheirTerms) {
  const Series s = synth_series(SynthKind::sines, 500, 3, 4, {.noise = 0.0});
  for (std::size_t f = 0; f < 3; ++f) {
    const auto terms = sine_terms(f, 4);
    ASSERT_EQ(terms.size(), 3u);
    for (std::size_t t = 0; t < 500; t += 7) {
      double x = 0;
      for (const SineTerm& term : terms)
        x += term.amplitude * std::sin(2 * std::numbers::pi * static_cast<double>(t) / term.period + term.phase);
      EXPECT_NEAR(s.values(t, f), x, 1e-12);
    }
  }
}

TEST(Synth, NoiseFreeSinesRepeat) {
  const Series s = synth_series(SynthKind::sines, 600, 2, 9, {.noise = 0.0});
  for (std::size_t t = 0; t + kSinePeriodLcm < 600; ++t)
    for (std::size_t f = 0; f < 2; ++f) EXPECT_NEAR(s.values(t, f), s.values(t + kSinePeriodLcm, f), 1e-9);
}

TEST(Synth, PresetNames) {
  EXPECT_EQ(parse_synth_kind("trend_season"), SynthKind::trend_season);
  EXPECT_THROW(parse_synth_kind("weather"), std::invalid_argument);
}

TEST(Csv, ReadsNumericRows) {
  TempFile f("lamformer_csv_plain.csv", "a,b\n1,2\n3,4.5\n-1e3,0\n");
  CsvReport rep;
  const Series s = load_csv(f.path(), &rep);
  EXPECT_EQ(s.names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(s.values, Tensor::matrix({{1, 2}, {3, 4.5}, {-1000, 0}}));
  EXPECT_FALSE(rep.timestamp_column);
  EXPECT_EQ(rep.rows_read, 3u);
  EXPECT_TRUE(rep.dropped.empty());
}

TEST(Csv, SkipsTimestampColumn) {
  TempFile f("lamformer_csv_ts.csv", "date,load\n2020-01-01 00:00,1.5\n2020-01-01 01:00,2.5\n");
  CsvReport rep;
  const Series s = load_csv(f.path(), &rep);
  EXPECT_TRUE(rep.timestamp_column);
  EXPECT_EQ(s.names, (std::vector<std::string>{"load"}));
  EXPECT_EQ(s.values, Tensor::matrix({{1.5}, {2.5}}));
}

TEST(Csv, DropsNonFiniteRowsWithLineNumbers) {
  TempFile f("lamformer_csv_nan.csv", "a,b\n1,2\nNaN,3\n4,x\n5,6\n");
  CsvReport rep;
  const Series s = load_csv(f.path(), &rep);
  EXPECT_EQ(s.values, Tensor::matrix({{1, 2}, {5, 6}}));
  ASSERT_EQ(rep.dropped.size(), 2u);
  EXPECT_EQ(rep.dropped[0].line, 3u);
  EXPECT_EQ(rep.dropped[1].line, 4u);
  EXPECT_NE(rep.dropped[1].reason.find("'x'"), std::string::npos);
}

TEST(Csv, RaggedRowNamesLine) {
  TempFile f("lamformer_csv_ragged.csv", "a,b\n1,2\n3\n");
  try {
    load_csv(f.path());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

TEST(Csv, UnusableFiles) {
  EXPECT_THROW(load_csv("/nonexistent/lamformer.csv"), DataError);
  TempFile only_ts("lamformer_csv_onlyts.csv", "date\n2020-01-01\n");
  EXPECT_THROW(load_csv(only_ts.path()), DataError);
  TempFile header("lamformer_csv_header.csv", "a,b\n");
  EXPECT_THROW(load_csv(header.path()), DataError);
}

TEST(Csv, WriteReadRoundTripIsExact) {
  std::mt19937_64 rng(1);
  const Series s{{"x", "y", "z"}, testing::random_tensor({17, 3}, rng, -1e3, 1e3)};
  TempFile f("lamformer_csv_round.csv");
  write_csv(f.path(), s);
  const Series back = load_csv(f.path());
  EXPECT_EQ(back.names, s.names);
  EXPECT_EQ(back.values, s.values);
}

TEST(ScalerTest, RejectsConstantFeature) {
  Tensor v({10, 3});
  for (std::size_t t = 0; t < 10; ++t) {
    v(t, 0) = static_cast<double>(t);
    v(t, 1) = 4.0;
    v(t, 2) = -static_cast<double>(t);
  }
  try {
    Scaler::fit(v, 0, 10);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("feature 1"), std::string::npos);
  }
}

TEST(ScalerTest, PopulationStatistics) {
  const Tensor v = Tensor::matrix({{1}, {2}, {3}, {4}});
  const Scaler s = Scaler::fit(v, 0, 4);
  EXPECT_DOUBLE_EQ(s.mean[0], 2.5);
  EXPECT_DOUBLE_EQ(s.stddev[0], std::sqrt(1.25));
}

TEST(ScalerTest, RoundTrip) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor v = testing::random_tensor({30, 4}, rng, -50, 50);
    const Scaler s = Scaler::fit(v, 0, 20);
    EXPECT_LE(max_abs_diff(s.destandardize(s.standardize(v)), v), 1e-12 * 50);
  }
}

TEST(Windows, CountFormulaByEnumeration) {
  for (std::size_t len = 0; len < 40; ++len)
    for (std::size_t n = 1; n < 6; ++n)
      for (std::size_t m = 1; m < 4; ++m)
        for (std::size_t stride = 1; stride < 5; ++stride) {
          std::size_t count = 0;
          for (std::size_t s = 0; s + n + m <= len; s += stride) ++count;
          EXPECT_EQ(window_count(len, n, m, stride), count);
        }
}

TEST(Windows, ExactLengthGivesOneWindow) {
  const Series raw = synth_series(SynthKind::sines, 12, 2, 0);
  const WindowedDataset data(raw, {.n = 8, .m = 4, .fractions = {.train = 1.0, .validation = 0.0}});
  EXPECT_EQ(data.size(Split::train), 1u);
  EXPECT_EQ(data.size(Split::validation), 0u);
  EXPECT_EQ(data.size(Split::test), 0u);
}

TEST(Windows, TooShortSeriesRejected) {
  const Series raw = synth_series(SynthKind::sines, 11, 2, 0);
  EXPECT_THROW(WindowedDataset(raw, {.n = 8, .m = 4}), DataError);
}

TEST(Windows, SplitsAreChronologicalAndDisjoint) {
  const Series raw = synth_series(SynthKind::ar_noise, 1000, 2, 3);
  const WindowedDataset data(raw, {.n = 24, .m = 6});
  EXPECT_EQ(data.range(Split::train).begin, 0u);
  EXPECT_EQ(data.range(Split::validation).end, 700u);
  EXPECT_EQ(data.range(Split::validation).length(), 105u);
  EXPECT_EQ(data.range(Split::test).end, 1000u);
  for (Split split : {Split::train, Split::validation, Split::test}) {
    const SplitRange r = data.range(split);
    for (std::size_t s : data.starts(split)) {
      EXPECT_GE(s, r.begin);
      EXPECT_LE(s + 24 + 6, r.end);
    }
  }
  EXPECT_LE(data.starts(Split::train).back() + 30, data.starts(Split::test).front());
  EXPECT_EQ(data.eval_stride(), 6u);
  EXPECT_EQ(data.starts(Split::test)[1] - data.starts(Split::test)[0], 6u);
}

TEST(Windows, TrainingRowsAreStandardized) {
  const Series raw = synth_series(SynthKind::trend_season, 900, 3, 5);
  const WindowedDataset data(raw, {.n = 24, .m = 6});
  const SplitRange r = data.range(Split::train);
  for (std::size_t f = 0; f < 3; ++f) {
    double mean = 0, sq = 0;
    for (std::size_t t = r.begin; t < r.end; ++t) mean += data.values()(t, f);
    mean /= r.length();
    for (std::size_t t = r.begin; t < r.end; ++t) sq += std::pow(data.values()(t, f) - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(sq / r.length()), 1.0, 1e-9);
  }
}

TEST(Windows, InputAndTargetAreConsecutiveRows) {
  const Series raw = synth_series(SynthKind::sines, 300, 2, 5);
  const WindowedDataset data(raw, {.n = 10, .m = 3});
  const std::size_t s = data.starts(Split::test)[2];
  const Tensor in = data.input(s), tgt = data.target(s);
  EXPECT_EQ(in(9, 1), data.values()(s + 9, 1));
  EXPECT_EQ(tgt(0, 0), data.values()(s + 10, 0));
  EXPECT_EQ(tgt(2, 1), data.values()(s + 12, 1));
}

TEST(Metrics, WorkedExample) {
  const Tensor pred = Tensor::vector({0, 2}), target = Tensor::vector({1, 0});
  EXPECT_DOUBLE_EQ(mse(pred, target), 2.5);
  EXPECT_DOUBLE_EQ(mae(pred, target), 1.5);
  EXPECT_THROW(mse(pred, Tensor::vector({1, 2, 3})), DimensionError);
  const Tensor ones = Tensor::matrix({{1, -1}, {1, 1}});
  EXPECT_DOUBLE_EQ(mse(add(ones, ones), ones), 1.0);
  EXPECT_DOUBLE_EQ(mae(Tensor({2, 2}), ones), 1.0);
}

TEST(Metrics, ZeroTogether) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = testing::random_tensor({4, 3}, rng);
    EXPECT_EQ(mse(a, a), 0.0);
    EXPECT_EQ(mae(a, a), 0.0);
    Tensor b = a;
    b[trial % 12] += 1e-3;
    EXPECT_GT(mse(a, b), 0.0);
    EXPECT_GT(mae(a, b), 0.0);
    EXPECT_LE(mae(a, b) * mae(a, b), mse(a, b) + 1e-18);
  }
}

TEST(Metrics, LastValueBaseline) {
  const Tensor input = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(last_value_forecast(input, 3), Tensor::matrix({{3, 4}, {3, 4}, {3, 4}}));
  // A noise-free linear trend: the repeat forecast misses by 1..m steps of slope.
  Series raw{{"x"}, Tensor({200, 1})};
  for (std::size_t t = 0; t < 200; ++t) raw.values(t, 0) = static_cast<double>(t);
  const WindowedDataset data(raw, {.n = 5, .m = 2});
  const double step = 1.0 / data.scaler().stddev[0];
  EXPECT_NEAR(last_value_baseline_mse(data, Split::test), (step * step + 4 * step * step) / 2, 1e-12);
}

TEST(Manifest, ListsWindowingAndScaler) {
  const WindowedDataset data(synth_series(SynthKind::sines, 300, 2, 5), {.n = 10, .m = 3, .train_stride = 2});
  TempFile f("lamformer_manifest.txt");
  write_dataset_manifest(f.path(), data);
  std::ifstream in(f.path());
  const std::string text((std::istreambuf_iterator<char>(in)), {});
  for (const char* key : {"n=10", "m=3", "stride=2", "eval_stride=3", "scaler_mean", "scaler_std"})
    EXPECT_NE(text.find(key), std::string::npos) << key;
}

}  // namespace
}  // namespace lamformer
