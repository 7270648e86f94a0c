#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lamformer/checkpoint.hpp"
#include "lamformer/model.hpp"
#include "lamformer/training.hpp"
#include "test_util.hpp"

namespace lamformer {
namespace {

using testing::random_tensor;

Tensor identity(std::size_t d) {
  Tensor eye({d, d});
  for (std::size_t i = 0; i < d; ++i) eye(i, i) = 1.0;
  return eye;
}

HeadWeights single_head(Tensor proj, Tensor out) {
  HeadWeights w;
  w.query = {proj};
  w.key = {proj};
  w.value = {proj};
  w.output = std::move(out);
  return w;
}

FeedForward<Tensor> identity_ff(std::size_t d) { return {identity(d), Tensor({d}), identity(d), Tensor({d})}; }

// Row-by-row softmax(QK^T/sqrt(d))V without the library kernels.
Tensor attention_by_rows(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t n = q.dim(0), d = q.dim(1);
  Tensor out({n, v.dim(1)});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> w(n);
    double peak = -1e300, z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0;
      for (std::size_t t = 0; t < d; ++t) dot += q(i, t) * k(j, t);
      w[j] = dot / std::sqrt(static_cast<double>(d));
      peak = std::max(peak, w[j]);
    }
    for (double& x : w) z += (x = std::exp(x - peak));
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < v.dim(1); ++c) out(i, c) += w[j] / z * v(j, c);
  }
  return out;
}

Tensor leaky(Tensor x, double slope) {
  for (double& v : x.data()) v = v >= 0 ? v : slope * v;
  return x;
}

ModelConfig tiny_config(AttentionKind kind) {
  ModelConfig cfg{.d_features = 2, .d_model = 4, .N = 1, .n = 8, .m = 2, .h = 2};
  cfg.attention.kind = kind;
  cfg.seed = 5;
  return cfg;
}

TEST(PositionalEncoding, FirstRowIsOne) {
  const Tensor pe = positional_encoding(5, 7);
  for (std::size_t j = 0; j < 7; ++j) EXPECT_EQ(pe(0, j), 1.0);
}

TEST(PositionalEncoding, SecondRowFirstColumn) {
  const Tensor pe = positional_encoding(3, 4);
  EXPECT_NEAR(pe(1, 0), 1.38177, 1e-5);
  EXPECT_DOUBLE_EQ(pe(1, 0), std::sin(1.0) + std::cos(1.0));
  EXPECT_DOUBLE_EQ(pe(2, 2), std::sin(2.0 / 100.0) + std::cos(2.0 / 100.0));
}

TEST(PositionalEncoding, AmplitudeBound) {
  const Tensor pe = positional_encoding(300, 16);
  for (double x : pe.data()) {
    EXPECT_LE(x, std::sqrt(2.0));
    EXPECT_GE(x, -std::sqrt(2.0));
  }
  EXPECT_THROW(positional_encoding(0, 3), ContractError);
}

TEST(EncoderLayer, ZeroWeightsAnnihilate) {
  const std::size_t d = 3;
  EncoderWeights<Tensor> w{single_head(Tensor({d, d}), Tensor({d, d})), {Tensor({d, d}), Tensor({d}), Tensor({d, d}), Tensor({d})}};
  std::mt19937_64 rng(1);
  const AttentionSpec spec{};
  EagerOps ops;
  for (double slope : {0.0, 0.01, 0.5}) {
    const Tensor out = encoder_layer(ops, random_tensor({6, d}, rng), w, {&spec, slope}, 0);
    EXPECT_EQ(out, Tensor({6, d}));
  }
}

TEST(EncoderLayer, IdentityProjectionsComposeOracleOps) {
  const std::size_t n = 6, d = 3;
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({n, d}, rng, -2, 2);
  EncoderWeights<Tensor> w{single_head(identity(d), identity(d)), identity_ff(d)};
  const AttentionSpec spec{};
  EagerOps ops;
  const Tensor out = encoder_layer(ops, x, w, {&spec, 0.01}, 0);
  const Tensor expected = leaky(leaky(add(x, attention_by_rows(x, x, x)), 0.01), 0.01);
  EXPECT_LE(max_abs_diff(out, expected), 1e-13);
}

TEST(DecoderLayer, ZeroEncoderAveragesValues) {
  const std::size_t n = 5, d = 2;
  std::mt19937_64 rng(3);
  const Tensor y = random_tensor({n, d}, rng);
  DecoderWeights<Tensor> w{single_head(identity(d), identity(d)), single_head(identity(d), identity(d)), identity_ff(d)};
  const AttentionSpec spec{};
  EagerOps ops;
  const Tensor out = decoder_layer(ops, y, Tensor({n, d}), w, {&spec, 0.01}, CrossWiring::encoder_queries, 0);

  const Tensor y1 = add(y, attention_by_rows(y, y, y));
  Tensor y2 = y1;
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += y1(i, c);
    mean /= n;
    for (std::size_t i = 0; i < n; ++i) y2(i, c) += mean;
  }
  EXPECT_LE(max_abs_diff(out, leaky(leaky(y2, 0.01), 0.01)), 1e-13);
}

TEST(DecoderLayer, ZeroWeightsAndShape) {
  const std::size_t d = 4;
  DecoderWeights<Tensor> w{single_head(Tensor({d, d}), Tensor({d, d})), single_head(Tensor({d, d}), Tensor({d, d})),
                           {Tensor({d, d}), Tensor({d}), Tensor({d, d}), Tensor({d})}};
  std::mt19937_64 rng(4);
  const AttentionSpec spec{.kind = AttentionKind::lam, .L = 3};
  EagerOps ops;
  const Tensor out = decoder_layer(ops, random_tensor({9, d}, rng), random_tensor({9, d}, rng), w, {&spec, 0.01},
                                   CrossWiring::encoder_queries, 0);
  EXPECT_EQ(out, Tensor({9, d}));
}

TEST(DecoderLayer, WiringsDiffer) {
  ModelConfig cfg = tiny_config(AttentionKind::full);
  const ForecastModel encoder_keyed(cfg);
  cfg.cross = CrossWiring::decoder_queries;
  const ForecastModel decoder_keyed(cfg, encoder_keyed.parameters());
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({8, 2}, rng);
  EXPECT_GT(max_abs_diff(encoder_keyed.forward(x), decoder_keyed.forward(x)), 1e-6);
}

TEST(Forward, ShapeContractForEveryKind) {
  std::mt19937_64 rng(6);
  for (AttentionKind kind : {AttentionKind::full, AttentionKind::lam, AttentionKind::prob, AttentionKind::lam_oracle}) {
    ModelConfig cfg{.d_features = 3, .d_model = 6, .N = 2, .n = 20, .m = 5, .h = 3};
    cfg.attention.kind = kind;
    const ForecastModel model(cfg);
    const Tensor out = model.forward(random_tensor({20, 3}, rng));
    EXPECT_EQ(out.shape(), (Tensor::Shape{5, 3})) << to_string(kind);
    EXPECT_EQ(model.forward_sequence(random_tensor({20, 3}, rng)).shape(), (Tensor::Shape{20, 3}));
  }
}

TEST(Forward, IdentityPipelineReproducesEmbeddedInput) {
  const std::size_t d = 3, n = 6;
  ModelConfig cfg{.d_features = d, .d_model = d, .N = 2, .n = n, .m = n, .h = 1};
  cfg.slope = 1.0;
  ForecastModel model(cfg);
  const auto layout = parameter_layout(cfg);
  for (std::size_t k = 0; k < layout.size(); ++k) {
    Tensor& p = model.parameters()[k];
    const std::string& name = layout[k].name;
    const bool attention = name.find("attn") != std::string::npos;
    if (p.rank() == 2 && !attention) {
      p = identity(p.dim(0));
    } else {
      p = Tensor(p.shape());
    }
  }
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({n, d}, rng);
  EXPECT_LE(max_abs_diff(model.forward(x), add(x, positional_encoding(n, d))), 1e-14);
}

TEST(Forward, DeterministicUnderSeed) {
  const ModelConfig cfg = tiny_config(AttentionKind::prob);
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({8, 2}, rng);
  EXPECT_EQ(ForecastModel(cfg).forward(x), ForecastModel(cfg).forward(x));
  ModelConfig other = cfg;
  other.seed = 6;
  EXPECT_NE(ForecastModel(other).forward(x), ForecastModel(cfg).forward(x));
}

TEST(Forward, RejectsBadInput) {
  const ForecastModel model(tiny_config(AttentionKind::lam));
  EXPECT_THROW(model.forward(Tensor({7, 2})), DimensionError);
  Tensor bad({8, 2});
  bad(3, 1) = std::nan("");
  EXPECT_THROW(model.forward(bad), NumericError);
}

TEST(Forward, LocalKernelInterchangeableWithOracle) {
  std::mt19937_64 rng(9);
  ModelConfig cfg{.d_features = 3, .d_model = 8, .N = 2, .n = 30, .m = 6, .h = 2};
  cfg.attention = {.kind = AttentionKind::lam, .L = 7};
  ForecastModel model(cfg);
  const Tensor x = random_tensor({30, 3}, rng);
  const Tensor blocked = model.forward(x);
  model.attention().kind = AttentionKind::lam_oracle;
  EXPECT_LE(max_abs_diff(blocked, model.forward(x)), 1e-10);
}

TEST(Forward, LocalDotProductsLinearInLength) {
  std::mt19937_64 rng(10);
  for (std::size_t n : {32u, 64u, 128u}) {
    ModelConfig cfg{.d_features = 2, .d_model = 4, .N = 1, .n = n, .m = 4, .h = 2};
    cfg.attention = {.kind = AttentionKind::lam, .L = 8};
    const ForecastModel model(cfg);
    AttentionCounters counters;
    model.forward(random_tensor({n, 2}, rng), &counters);
    EXPECT_EQ(counters.dot_products, 3u * 2u * (2 * 8 - 1) * n);
  }
}

TEST(ModelGradients, FullModelMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (AttentionKind kind : {AttentionKind::full, AttentionKind::lam}) {
    for (int trial = 0; trial < 3; ++trial) {
      ModelConfig cfg = tiny_config(kind);
      cfg.seed = 100 + trial;
      const ForecastModel model(cfg);
      const Tensor x = random_tensor({8, 2}, rng), target = random_tensor({2, 2}, rng);
      const ad::LossBuilder build = [&](ad::Graph& g, std::span<const ad::Var> p) {
        return g.mse(model.forward_graph(g, p, g.constant(x)), target);
      };
      EXPECT_LE(ad::check_gradients(build, model.parameters()).worst_relative_error, 1e-6) << to_string(kind);
    }
  }
}

TEST(ParameterCount, SingleAffineBlock) {
  ModelConfig cfg{.d_features = 2, .d_model = 2, .N = 1, .n = 4, .m = 2, .h = 1};
  const auto breakdown = ForecastModel(cfg).parameter_breakdown();
  std::map<std::string, std::size_t> blocks(breakdown.blocks.begin(), breakdown.blocks.end());
  EXPECT_EQ(blocks.at("output"), 6u);
  EXPECT_EQ(blocks.at("embedding"), 6u);
  EXPECT_EQ(blocks.at("time"), 8u);
}

TEST(ParameterCount, MatchesClosedForm) {
  for (std::size_t N : {1u, 2u, 4u}) {
    ModelConfig cfg{.d_features = 3, .d_model = 8, .N = N, .n = 24, .m = 6, .h = 2};
    const ForecastModel model(cfg);
    const std::size_t d = 8, d_a = 4, h = 2;
    const std::size_t mh = h * d_a * 3 * d + h * d_a * d;
    const std::size_t ff = 2 * (d * d + d);
    const std::size_t expected = (3 * d + d) + N * (mh + ff) + N * (2 * mh + ff) + (d * 3 + 3) + 24 * 6;
    EXPECT_EQ(model.count_parameters(), expected);
    EXPECT_EQ(model.parameter_breakdown().total, expected);
  }
}

TEST(ParameterCount, LayersAddQuadraticWidthTerm) {
  ModelConfig one{.d_features = 3, .d_model = 16, .N = 1, .n = 24, .m = 6, .h = 4};
  ModelConfig two = one;
  two.N = 2;
  const std::size_t delta = ForecastModel(two).count_parameters() - ForecastModel(one).count_parameters();
  // One encoder and one decoder layer: 3 multi-heads of 4 d^2 plus two d x d projections each.
  EXPECT_EQ(delta, 3 * 4 * 16 * 16 + 2 * 2 * (16 * 16 + 16));
}

TEST(AdamTest, FirstStepMovesBySignTimesRate) {
  std::vector<Tensor> params{Tensor::vector({1.0, -2.0, 0.5})};
  Adam adam(params, {.lr = 0.1});
  ad::Gradients g;
  g[0] = Tensor::vector({3.0, -0.5, 0.0});
  adam.step(params, g);
  // Bias-corrected moments equal g and g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(params[0][0], 1.0 - 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_NEAR(params[0][1], -2.0 + 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_EQ(params[0][2], 0.5);
  EXPECT_EQ(adam.steps(), 1u);
}

WindowedDataset small_sines(std::size_t n, std::size_t m, std::size_t length = 400) {
  return WindowedDataset(synth_series(SynthKind::sines, length, 2, 3), {.n = n, .m = m, .train_stride = 2});
}

TEST(Training, ZeroLearningRateKeepsLossesIdentical) {
  const WindowedDataset data = small_sines(16, 4);
  ModelConfig cfg{.d_features = 2, .d_model = 4, .N = 1, .n = 16, .m = 4, .h = 2};
  cfg.attention.kind = AttentionKind::lam;
  ForecastModel model(cfg);
  const auto before = model.parameters();
  TrainOptions opts{.epochs = 3, .batch = 8, .adam = {.lr = 0.0}, .patience = 10};
  const TrainReport report = train(model, data, opts);
  ASSERT_EQ(report.curve.size(), 3u);
  for (const EpochStats& e : report.curve) {
    EXPECT_EQ(e.train_mse, report.curve[0].train_mse);
    EXPECT_EQ(e.val_mse, report.curve[0].val_mse);
    EXPECT_EQ(e.train_mae, report.curve[0].train_mae);
  }
  EXPECT_EQ(model.parameters(), before);
}

TEST(Training, SeededRunsReproduce) {
  const WindowedDataset data = small_sines(16, 4);
  ModelConfig cfg{.d_features = 2, .d_model = 4, .N = 1, .n = 16, .m = 4, .h = 2};
  cfg.attention.kind = AttentionKind::lam;
  auto run = [&] {
    ForecastModel model(cfg);
    const TrainReport r = train(model, data, {.epochs = 3, .batch = 8, .shuffle_seed = 4});
    return std::make_pair(r, model.parameters());
  };
  const auto [a, pa] = run();
  const auto [b, pb] = run();
  ASSERT_EQ(a.curve.size(), b.curve.size());
  for (std::size_t k = 0; k < a.curve.size(); ++k) {
    EXPECT_EQ(a.curve[k].train_mse, b.curve[k].train_mse);
    EXPECT_EQ(a.curve[k].val_mse, b.curve[k].val_mse);
  }
  EXPECT_EQ(pa, pb);
}

TEST(Training, ConstantTargetsAreLearnedThroughBiases) {
  // Constant after the first sample: every forecast target is the same value.
  Series raw{{"x"}, Tensor({600, 1})};
  raw.values(0, 0) = 1.0;
  const WindowedDataset data(raw, {.n = 12, .m = 3, .fractions = {.train = 1.0, .validation = 0.0}});
  ModelConfig cfg{.d_features = 1, .d_model = 4, .N = 1, .n = 12, .m = 3, .h = 2};
  cfg.attention.kind = AttentionKind::lam;
  ForecastModel model(cfg);
  const Metrics initial = evaluate(model, data, Split::train);
  const TrainReport report = train(model, data, {.epochs = 5, .batch = 16, .adam = {.lr = 1e-2}});
  ASSERT_LE(report.curve.size(), 5u);
  const Metrics final_metrics = evaluate(model, data, Split::train);
  EXPECT_LT(final_metrics.mse, 1e-3);
  EXPECT_LT(final_metrics.mse, 0.01 * initial.mse);

  const Tensor forecast = model.forward(data.input(data.starts(Split::train).back()));
  for (std::size_t r = 1; r < forecast.dim(0); ++r) EXPECT_NEAR(forecast(r, 0), forecast(0, 0), 0.05);
}

TEST(Training, EarlyStopRestoresBestParameters) {
  const WindowedDataset data = small_sines(16, 4);
  ModelConfig cfg{.d_features = 2, .d_model = 4, .N = 1, .n = 16, .m = 4, .h = 2};
  ForecastModel model(cfg);
  // A huge step size makes validation loss wander; patience 1 stops quickly.
  const TrainReport report = train(model, data, {.epochs = 30, .batch = 4, .adam = {.lr = 0.5}, .patience = 1});
  ASSERT_FALSE(report.curve.empty());
  ASSERT_GE(report.best_epoch, 1u);
  if (report.early_stopped) EXPECT_EQ(report.curve.size(), report.best_epoch + 1);
  const Metrics val = evaluate(model, data, Split::validation);
  EXPECT_NEAR(val.mse, report.curve[report.best_epoch - 1].val_mse, 1e-12);
}

TEST(Training, NonFiniteLossAborts) {
  const WindowedDataset data = small_sines(16, 4);
  ModelConfig cfg{.d_features = 2, .d_model = 4, .N = 1, .n = 16, .m = 4, .h = 2};
  ForecastModel model(cfg);
  model.parameters().back()(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(train(model, data, {.epochs = 1}), NumericError);
}

TEST(Training, EmptyTrainingSplitThrows) {
  const Series raw = synth_series(SynthKind::sines, 26, 1, 1);
  const WindowedDataset data(raw, {.n = 16, .m = 4});
  ModelConfig cfg{.d_features = 1, .d_model = 4, .N = 1, .n = 16, .m = 4, .h = 2};
  ForecastModel model(cfg);
  ASSERT_EQ(data.size(Split::train), 0u);
  EXPECT_THROW(train(model, data, {}), DataError);
}

class CheckpointTest : public ::testing::Test {
 protected:
  std::string path = (std::filesystem::temp_directory_path() / "lamformer_ckpt_test.bin").string();
  void TearDown() override { std::filesystem::remove(path); }
};

TEST_F(CheckpointTest, RoundTripIsBitwise) {
  std::mt19937_64 rng(12);
  ModelConfig cfg{.d_features = 3, .d_model = 6, .N = 2, .n = 20, .m = 5, .h = 3};
  cfg.attention = {.kind = AttentionKind::prob, .L = 0, .band_rule = BandRule::parse("ceil4")};
  cfg.attention.prob.seed = 99;
  cfg.slope = 0.0123456789012345;
  cfg.cross = CrossWiring::decoder_queries;
  const ForecastModel model(cfg);
  const Scaler scaler{{0.1, 1.0 / 3.0, -2.5}, {1.0 / 7.0, 2.0, 1e-3}};
  save_checkpoint(path, model, &scaler, {"a", "b", "c"});

  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.model.parameters(), model.parameters());
  ASSERT_TRUE(ck.scaler.has_value());
  EXPECT_EQ(ck.scaler->mean, scaler.mean);
  EXPECT_EQ(ck.scaler->stddev, scaler.stddev);
  EXPECT_EQ(ck.feature_names, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(ck.model.config().slope, cfg.slope);
  EXPECT_EQ(ck.model.config().cross, CrossWiring::decoder_queries);
  EXPECT_EQ(ck.model.config().attention.band_rule.kind, BandRuleKind::ceil_four);
  const Tensor x = random_tensor({20, 3}, rng);
  EXPECT_EQ(ck.model.forward(x), model.forward(x));
}

TEST_F(CheckpointTest, MissingAndCorruptFilesNamePath) {
  try {
    load_checkpoint(path);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(path), std::string::npos);
  }
  std::ofstream(path) << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(path), DataError);
}

TEST_F(CheckpointTest, TruncatedFileRejected) {
  save_checkpoint(path, ForecastModel(tiny_config(AttentionKind::lam)));
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  EXPECT_THROW(load_checkpoint(path), DataError);
}

}  // namespace
}  // namespace lamformer
