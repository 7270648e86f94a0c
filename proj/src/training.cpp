#include "lamformer/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace lamformer {

Adam::Adam(const std::vector<Tensor>& params, AdamOptions opts) : opts_(opts) {
  for (const Tensor& p : params) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::step(std::vector<Tensor>& params, const ad::Gradients& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto it = grads.find(k);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    Tensor& p = params[k];
    for (std::size_t e = 0; e < p.size(); ++e) {
      m_[k][e] = opts_.beta1 * m_[k][e] + (1.0 - opts_.beta1) * g[e];
      v_[k][e] = opts_.beta2 * v_[k][e] + (1.0 - opts_.beta2) * g[e] * g[e];
      p[e] -= opts_.lr * (m_[k][e] / c1) / (std::sqrt(v_[k][e] / c2) + opts_.eps);
    }
  }
}

Metrics evaluate(const ForecastModel& model, const WindowedDataset& data, Split split) {
  const auto& starts = data.starts(split);
  if (starts.empty()) throw DataError("split has no windows");
  Metrics out;
  for (std::size_t s : starts) {
    const Tensor pred = model.forward(data.input(s));
    const Tensor target = data.target(s);
    out.mse += mse(pred, target);
    out.mae += mae(pred, target);
  }
  out.mse /= static_cast<double>(starts.size());
  out.mae /= static_cast<double>(starts.size());
  return out;
}

ad::Gradients batch_gradients(const ForecastModel& model, const WindowedDataset& data,
                              std::span<const std::size_t> starts, std::vector<double>* window_mse,
                              std::vector<double>* window_mae) {
  if (starts.empty()) throw ContractError("empty batch");
  ad::Graph g;
  const auto params = model.register_parameters(g);
  ad::Var total{};
  for (std::size_t b = 0; b < starts.size(); ++b) {
    const Tensor target = data.target(starts[b]);
    const ad::Var pred = model.forward_graph(g, params, g.constant(data.input(starts[b])));
    if (window_mae) window_mae->push_back(mae(g.value(pred), target));
    const ad::Var loss = g.mse(pred, target);
    if (window_mse) window_mse->push_back(g.value(loss)[0]);
    total = b == 0 ? loss : g.add(total, loss);
  }
  return g.backward(g.scale(total, 1.0 / static_cast<double>(starts.size())));
}

TrainReport train(ForecastModel& model, const WindowedDataset& data, const TrainOptions& opts) {
  const auto& train_starts = data.starts(Split::train);
  if (train_starts.empty()) throw DataError("training split has no windows");
  if (opts.batch < 1) throw ContractError("batch size must be >= 1");
  if (data.n() != model.config().n || data.m() != model.config().m ||
      data.features() != model.config().d_features) {
    throw ContractError("dataset windows do not match the model configuration");
  }
  const bool has_val = data.size(Split::validation) > 0;

  TrainReport report;
  Adam adam(model.parameters(), opts.adam);
  std::mt19937_64 rng(opts.shuffle_seed);
  std::vector<std::size_t> order(train_starts.size());
  std::iota(order.begin(), order.end(), 0);

  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params = model.parameters();
  std::size_t since_best = 0;

  std::vector<double> loss_by_window(order.size()), mae_by_window(order.size());
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t first = 0; first < order.size(); first += opts.batch) {
      const std::size_t last = std::min(order.size(), first + opts.batch);
      std::vector<std::size_t> starts;
      for (std::size_t k = first; k < last; ++k) starts.push_back(train_starts[order[k]]);
      std::vector<double> losses, maes;
      const ad::Gradients grads = batch_gradients(model, data, starts, &losses, &maes);
      for (std::size_t k = first; k < last; ++k) {
        if (!std::isfinite(losses[k - first])) {
          std::ostringstream msg;
          msg << "non-finite training loss in epoch " << epoch << " at window " << train_starts[order[k]];
          if (!report.curve.empty()) {
            const EpochStats& prev = report.curve.back();
            msg << "; last finite epoch " << prev.epoch << ": train_mse=" << prev.train_mse
                << " val_mse=" << prev.val_mse;
          }
          throw NumericError(msg.str());
        }
        loss_by_window[order[k]] = losses[k - first];
        mae_by_window[order[k]] = maes[k - first];
      }
      adam.step(model.parameters(), grads);
    }

    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t w = 0; w < order.size(); ++w) {
      stats.train_mse += loss_by_window[w];
      stats.train_mae += mae_by_window[w];
    }
    stats.train_mse /= static_cast<double>(order.size());
    stats.train_mae /= static_cast<double>(order.size());
    if (has_val) {
      const Metrics val = evaluate(model, data, Split::validation);
      stats.val_mse = val.mse;
      stats.val_mae = val.mae;
    } else {
      stats.val_mse = stats.train_mse;
      stats.val_mae = stats.train_mae;
    }
    report.curve.push_back(stats);
    if (opts.on_epoch) opts.on_epoch(stats);

    if (stats.val_mse < best) {
      best = stats.val_mse;
      best_params = model.parameters();
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= opts.patience) {
      report.early_stopped = true;
      break;
    }
  }
  if (report.best_epoch > 0) model.parameters() = std::move(best_params);
  return report;
}

}  // namespace lamformer
