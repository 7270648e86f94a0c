#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lamformer/autodiff.hpp"
#include "test_util.hpp"

namespace lamformer::ad {
namespace {

using lamformer::testing::random_tensor;
using lamformer::testing::uniform_index;

constexpr double kTol = 1e-6;
constexpr int kTrials = 20;

// Random target so the mse loss exercises every output entry differently.
Var loss_against_target(Graph& g, Var out, std::mt19937_64& rng) {
  return g.mse(out, random_tensor(g.value(out).shape(), rng));
}

void expect_gradients_match(const std::string& label, const std::function<LossBuilder(std::mt19937_64&)>& make,
                            const std::function<std::vector<Tensor>(std::mt19937_64&)>& inputs) {
  std::mt19937_64 rng(std::hash<std::string>{}(label));
  for (int trial = 0; trial < kTrials; ++trial) {
    std::vector<Tensor> x = inputs(rng);
    std::mt19937_64 target_rng(rng());
    const std::uint64_t target_seed = target_rng();
    LossBuilder inner = make(rng);
    LossBuilder build = [&](Graph& g, std::span<const Var> v) {
      std::mt19937_64 r(target_seed);
      return loss_against_target(g, inner(g, v), r);
    };
    const GradCheckResult res = check_gradients(build, x);
    EXPECT_LE(res.worst_relative_error, kTol) << label << " trial " << trial;
  }
}

TEST(Backward, SquareOfScalar) {
  Graph g;
  Var x = g.parameter(0, Tensor::vector({3.0}));
  const Gradients grads = g.backward(g.mse(x, Tensor::vector({0.0})));
  EXPECT_DOUBLE_EQ(grads.at(0)[0], 6.0);
}

TEST(Backward, SumThroughIdentityAffineIsOnes) {
  Graph g;
  Var x = g.parameter(0, Tensor::matrix({{1, -2, 3}, {4, 5, -6}}));
  Var w = g.constant(Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  Var b = g.constant(Tensor({3}));
  const Gradients grads = g.backward(g.sum(g.affine(x, w, b, {})));
  EXPECT_EQ(grads.at(0), Tensor({2, 3}, 1.0));
}

TEST(Backward, MaskedSoftmaxEntrySaturates) {
  Graph g;
  Var a = g.parameter(0, Tensor::vector({0.7}));
  Var row = g.add_constant(g.concat_cols(std::vector<Var>{g.reshape(a, {1, 1}), g.constant(Tensor({1, 1}))}),
                           Tensor::matrix({{0.0, kNegInf}}));
  const Gradients grads = g.backward(g.mse(g.softmax(row), Tensor::matrix({{0.3, 0.1}})));
  EXPECT_EQ(grads.at(0)[0], 0.0);
}

TEST(Backward, NonScalarLossIsRejected) {
  Graph g;
  Var x = g.parameter(0, Tensor({2}));
  EXPECT_THROW(g.backward(x), ContractError);
}

TEST(Backward, UnusedParameterGetsZeroGradient) {
  Graph g;
  Var x = g.parameter(0, Tensor::vector({1.0, 2.0}));
  g.parameter(1, Tensor({2, 2}, 5.0));
  const Gradients grads = g.backward(g.sum(x));
  EXPECT_EQ(grads.at(1), Tensor({2, 2}));
}

TEST(Backward, SharedParameterAccumulates) {
  Graph g;
  Var x = g.parameter(0, Tensor::vector({2.0}));
  const Gradients grads = g.backward(g.sum(g.add(x, x)));
  EXPECT_DOUBLE_EQ(grads.at(0)[0], 2.0);
}

TEST(FiniteDiff, SquareAtThree) {
  const Tensor g = finite_diff_grad([](const Tensor& x) { return x[0] * x[0]; }, Tensor::vector({3.0}), 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-9);
}

TEST(FiniteDiff, ConstantAndLinear) {
  const Tensor x = Tensor::vector({0.5, -2.0, 9.0});
  EXPECT_EQ(finite_diff_grad([](const Tensor&) { return 4.2; }, x), Tensor({3}));
  const Tensor g = finite_diff_grad(
      [](const Tensor& t) {
        double s = 0;
        for (double v : t.data()) s += v;
        return s;
      },
      x);
  for (double v : g.data()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(FiniteDiff, NonFiniteEvaluationThrows) {
  EXPECT_THROW(finite_diff_grad([](const Tensor& t) { return std::log(t[0]); }, Tensor::vector({0.0}), 1e-5),
               NumericError);
  EXPECT_THROW(finite_diff_grad([](const Tensor&) { return 0.0; }, Tensor::vector({0.0}), 0.0), ContractError);
}

TEST(GradCheck, Matmul) {
  expect_gradients_match(
      "matmul", [](std::mt19937_64&) -> LossBuilder { return [](Graph& g, auto v) { return g.matmul(v[0], v[1]); }; },
      [](std::mt19937_64& rng) {
        const std::size_t s = uniform_index(rng, 1, 3), p = uniform_index(rng, 1, 4), q = uniform_index(rng, 1, 4),
                          r = uniform_index(rng, 1, 4);
        return std::vector<Tensor>{random_tensor({s, p, q}, rng), random_tensor({s, q, r}, rng)};
      });
}

TEST(GradCheck, MatmulBroadcastRank2) {
  expect_gradients_match(
      "matmul-bcast",
      [](std::mt19937_64&) -> LossBuilder { return [](Graph& g, auto v) { return g.matmul(v[0], v[1]); }; },
      [](std::mt19937_64& rng) {
        const std::size_t s = uniform_index(rng, 2, 3), p = uniform_index(rng, 1, 4), q = uniform_index(rng, 1, 4);
        return std::vector<Tensor>{random_tensor({s, p, q}, rng), random_tensor({q, 3}, rng)};
      });
}

TEST(GradCheck, MatmulNt) {
  expect_gradients_match(
      "matmul_nt",
      [](std::mt19937_64&) -> LossBuilder { return [](Graph& g, auto v) { return g.matmul_nt(v[0], v[1]); }; },
      [](std::mt19937_64& rng) {
        const std::size_t s = uniform_index(rng, 1, 3), p = uniform_index(rng, 1, 4), q = uniform_index(rng, 1, 4),
                          r = uniform_index(rng, 1, 4);
        return std::vector<Tensor>{random_tensor({s, p, q}, rng), random_tensor({s, r, q}, rng)};
      });
}

TEST(GradCheck, AddAndScale) {
  expect_gradients_match(
      "add-scale",
      [](std::mt19937_64& rng) -> LossBuilder {
        const double c = std::uniform_real_distribution<double>(-3, 3)(rng);
        return [c](Graph& g, auto v) { return g.scale(g.add(v[0], v[1]), c); };
      },
      [](std::mt19937_64& rng) {
        const std::size_t n = uniform_index(rng, 1, 5), d = uniform_index(rng, 1, 5);
        return std::vector<Tensor>{random_tensor({n, d}, rng), random_tensor({n, d}, rng)};
      });
}

TEST(GradCheck, MaskedSoftmax) {
  expect_gradients_match(
      "softmax",
      [](std::mt19937_64& rng) -> LossBuilder {
        const std::size_t seed = rng();
        return [seed](Graph& g, auto v) {
          std::mt19937_64 r(seed);
          const Tensor& x = g.value(v[0]);
          Tensor mask(x.shape());
          std::bernoulli_distribution drop(0.4);
          for (std::size_t row = 0; row < x.rows(); ++row)
            for (std::size_t c = 1; c < x.cols(); ++c)
              if (drop(r)) mask[row * x.cols() + c] = kNegInf;
          return g.softmax(g.add_constant(v[0], mask));
        };
      },
      [](std::mt19937_64& rng) {
        return std::vector<Tensor>{random_tensor({uniform_index(rng, 1, 3), uniform_index(rng, 1, 4),
                                                  uniform_index(rng, 1, 6)},
                                                 rng, -3, 3)};
      });
}

TEST(GradCheck, LeakyReluAndAffine) {
  expect_gradients_match(
      "affine-leaky",
      [](std::mt19937_64& rng) -> LossBuilder {
        const bool leaky = std::bernoulli_distribution(0.5)(rng);
        return [leaky](Graph& g, auto v) {
          Var y = g.affine(v[0], v[1], v[2], {leaky ? Activation::leaky_relu : Activation::none, 0.01});
          return g.leaky_relu(y, 0.2);
        };
      },
      [](std::mt19937_64& rng) {
        const std::size_t n = uniform_index(rng, 1, 5), p = uniform_index(rng, 1, 4), q = uniform_index(rng, 1, 4);
        return std::vector<Tensor>{random_tensor({n, p}, rng), random_tensor({p, q}, rng), random_tensor({q}, rng)};
      });
}

TEST(GradCheck, GatherWithPaddingAndDuplicates) {
  expect_gradients_match(
      "gather",
      [](std::mt19937_64& rng) -> LossBuilder {
        std::vector<std::int64_t> idx;
        const std::size_t count = uniform_index(rng, 1, 8);
        for (std::size_t k = 0; k < count; ++k)
          idx.push_back(static_cast<std::int64_t>(uniform_index(rng, 0, 8)) - 2);
        return [idx](Graph& g, auto v) { return g.gather_rows(v[0], idx, 0.0); };
      },
      [](std::mt19937_64& rng) { return std::vector<Tensor>{random_tensor({5, uniform_index(rng, 1, 3)}, rng)}; });
}

TEST(GradCheck, ConcatRowsColsReshapeMean) {
  expect_gradients_match(
      "concat",
      [](std::mt19937_64&) -> LossBuilder {
        return [](Graph& g, auto v) {
          Var rows = g.concat_rows(std::vector<Var>{v[0], v[1]});
          Var cols = g.concat_cols(std::vector<Var>{rows, g.reshape(v[2], g.value(rows).shape())});
          return g.concat_rows(std::vector<Var>{cols, g.column_mean(cols)});
        };
      },
      [](std::mt19937_64& rng) {
        const std::size_t a = uniform_index(rng, 1, 3), b = uniform_index(rng, 1, 3), d = uniform_index(rng, 1, 3);
        return std::vector<Tensor>{random_tensor({a, d}, rng), random_tensor({b, d}, rng),
                                   random_tensor({(a + b) * d}, rng)};
      });
}

TEST(GradCheck, SumAndMse) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < kTrials; ++trial) {
    const Tensor target = random_tensor({3, 2}, rng);
    const std::vector<Tensor> inputs{random_tensor({3, 2}, rng)};
    LossBuilder build = [&](Graph& g, std::span<const Var> v) {
      return g.add(g.sum(g.scale(v[0], 0.3)), g.mse(v[0], target));
    };
    EXPECT_LE(check_gradients(build, inputs).worst_relative_error, kTol);
  }
}

}  // namespace
}  // namespace lamformer::ad
