#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "lamformer/data.hpp"
#include "lamformer/model.hpp"

namespace lamformer {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction over a fixed list of parameter tensors.
class Adam {
 public:
  Adam(const std::vector<Tensor>& params, AdamOptions opts);
  void step(std::vector<Tensor>& params, const ad::Gradients& grads);
  std::uint64_t steps() const { return t_; }

 private:
  AdamOptions opts_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_mse = 0.0;
  double val_mse = 0.0;
  double train_mae = 0.0;
  double val_mae = 0.0;
};

struct TrainOptions {
  std::size_t epochs = 20;
  std::size_t batch = 32;
  AdamOptions adam{};
  std::size_t patience = 3;
  std::uint64_t shuffle_seed = 0;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainReport {
  std::vector<EpochStats> curve;
  std::size_t best_epoch = 0;  // 0: initial weights kept
  bool early_stopped = false;
};

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
};

// Mean per-window MSE/MAE over a split in standardised space.
Metrics evaluate(const ForecastModel& model, const WindowedDataset& data, Split split);

// One batch step's loss graph: mean of per-window MSE.
ad::Gradients batch_gradients(const ForecastModel& model, const WindowedDataset& data,
                              std::span<const std::size_t> starts, std::vector<double>* window_mse = nullptr,
                              std::vector<double>* window_mae = nullptr);

// Minimises the windowed MSE with Adam. Training metrics are the per-window
// losses seen during the epoch, summed in window order. Early stopping
// watches the validation MSE (training MSE when the validation split has no
// windows) and restores the best parameters. Throws NumericError on a
// non-finite loss with the last finite epoch in the message.
TrainReport train(ForecastModel& model, const WindowedDataset& data, const TrainOptions& opts);

}  // namespace lamformer
