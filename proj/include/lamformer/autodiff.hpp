#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "lamformer/tensor.hpp"

namespace lamformer::ad {

using ParamId = std::size_t;

// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  std::size_t id = 0;
};

enum class OpKind {
  constant,
  parameter,
  matmul,
  matmul_nt,
  add,
  add_constant,
  scale,
  softmax,
  leaky_relu,
  affine,
  gather_rows,
  concat_rows,
  concat_cols,
  reshape,
  column_mean,
  sum,
  mse,
};

using Gradients = std::map<ParamId, Tensor>;

// Tape of tensor operations. Nodes are appended in evaluation order, so the
// insertion order is a topological order and backward walks it in reverse.
class Graph {
 public:
  Var constant(Tensor value);
  Var parameter(ParamId id, Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  // Adds a fixed tensor (e.g. a {0, -inf} mask); no gradient flows into it.
  Var add_constant(Var a, const Tensor& c);
  Var scale(Var a, double factor);
  Var softmax(Var a);
  Var leaky_relu(Var a, double slope);
  Var affine(Var x, Var w, Var b, ActivationSpec act);
  Var gather_rows(Var m, std::vector<std::int64_t> indices, double pad);
  Var concat_rows(std::span<const Var> parts);
  Var concat_cols(std::span<const Var> parts);
  Var reshape(Var a, Tensor::Shape shape);
  Var column_mean(Var a);
  Var sum(Var a);
  // mean((pred - target)^2) over every entry.
  Var mse(Var pred, Tensor target);

  // dLoss/dtheta for every registered parameter. Parameters the loss does not
  // depend on receive a zero tensor. Throws ContractError for a non-scalar loss.
  Gradients backward(Var loss) const;

  // Smallest |input| over every leaky ReLU recorded so far (infinity if none).
  // A finite-difference step larger than this straddles a kink.
  double kink_distance() const;

 private:
  struct Node {
    OpKind kind{};
    std::vector<std::size_t> inputs{};
    Tensor value{};
    Tensor aux{};  // affine pre-activation, mse target
    std::vector<std::int64_t> indices{};
    double scalar = 0.0;
    ActivationSpec act{};
    std::optional<ParamId> param{};
  };

  Var push(Node node);
  const Node& node(Var v) const { return nodes_.at(v.id); }

  std::vector<Node> nodes_;
};

// Policy adapter so generic kernels can record onto a Graph (see EagerOps).
struct GraphOps {
  using Value = Var;
  Graph& graph;

  const Tensor& value(Var v) const { return graph.value(v); }
  Var constant(Tensor t) const { return graph.constant(std::move(t)); }
  Var matmul(Var a, Var b) const { return graph.matmul(a, b); }
  Var matmul_nt(Var a, Var b) const { return graph.matmul_nt(a, b); }
  Var add(Var a, Var b) const { return graph.add(a, b); }
  Var add_constant(Var a, const Tensor& c) const { return graph.add_constant(a, c); }
  Var scale(Var a, double factor) const { return graph.scale(a, factor); }
  Var softmax(Var a) const { return graph.softmax(a); }
  Var leaky_relu(Var a, double slope) const { return graph.leaky_relu(a, slope); }
  Var affine(Var x, Var w, Var b, ActivationSpec act) const { return graph.affine(x, w, b, act); }
  Var gather_rows(Var m, std::vector<std::int64_t> indices, double pad) const {
    return graph.gather_rows(m, std::move(indices), pad);
  }
  Var concat_rows(std::span<const Var> parts) const { return graph.concat_rows(parts); }
  Var concat_cols(std::span<const Var> parts) const { return graph.concat_cols(parts); }
  Var reshape(Var a, Tensor::Shape shape) const { return graph.reshape(a, std::move(shape)); }
  Var column_mean(Var a) const { return graph.column_mean(a); }
};

// --- verification oracle ----------------------------------------------------

using ScalarFunction = std::function<double(const Tensor&)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
// Throws NumericError if f is not finite at a probed point.
Tensor finite_diff_grad(const ScalarFunction& f, const Tensor& x, double h = 1e-5);

// ||analytic - numeric||_inf / max(1, ||numeric||_inf)
double gradient_relative_error(const Tensor& analytic, const Tensor& numeric);

// Builds a scalar loss from graph inputs; each input is registered as a parameter.
using LossBuilder = std::function<Var(Graph&, std::span<const Var>)>;

struct GradCheckResult {
  double worst_relative_error = 0.0;
  std::vector<double> per_input;
};

// Compares backward() against finite_diff_grad for each input tensor.
GradCheckResult check_gradients(const LossBuilder& build, const std::vector<Tensor>& inputs,
                                double h = 1e-5);

}  // namespace lamformer::ad
