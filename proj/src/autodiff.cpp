#include "lamformer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace lamformer::ad {

namespace {

// Sums a broadcast batch gradient back down to a rank-2 operand.
Tensor reduce_to_shape(Tensor g, const Tensor::Shape& target) {
  if (g.shape() == target) return g;
  if (g.rank() == 3 && target.size() == 2 && g.dim(1) == target[0] && g.dim(2) == target[1]) {
    Tensor out(target);
    const std::size_t slab = target[0] * target[1];
    for (std::size_t b = 0; b < g.dim(0); ++b)
      for (std::size_t k = 0; k < slab; ++k) out[k] += g[b * slab + k];
    return out;
  }
  throw DimensionError("cannot reduce gradient " + shape_string(g.shape()) + " to " +
                       shape_string(target));
}

void accumulate(std::vector<Tensor>& grads, std::size_t id, Tensor g) {
  Tensor& slot = grads[id];
  if (slot.empty()) {
    slot = std::move(g);
  } else {
    slot = lamformer::add(std::move(slot), g);
  }
}

}  // namespace

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Graph::constant(Tensor value) {
  return push(Node{.kind = OpKind::constant, .value = std::move(value)});
}

Var Graph::parameter(ParamId id, Tensor value) {
  return push(Node{.kind = OpKind::parameter, .value = std::move(value), .param = id});
}

Var Graph::matmul(Var a, Var b) {
  Tensor out = matmul_batched(value(a), value(b));
  return push(Node{.kind = OpKind::matmul, .inputs = {a.id, b.id}, .value = std::move(out)});
}

Var Graph::matmul_nt(Var a, Var b) {
  Tensor out = lamformer::matmul_nt(value(a), value(b));
  return push(Node{.kind = OpKind::matmul_nt, .inputs = {a.id, b.id}, .value = std::move(out)});
}

Var Graph::add(Var a, Var b) {
  Tensor out = lamformer::add(value(a), value(b));
  return push(Node{.kind = OpKind::add, .inputs = {a.id, b.id}, .value = std::move(out)});
}

Var Graph::add_constant(Var a, const Tensor& c) {
  Tensor out = lamformer::add(value(a), c);
  return push(Node{.kind = OpKind::add_constant, .inputs = {a.id}, .value = std::move(out)});
}

Var Graph::scale(Var a, double factor) {
  Tensor out = lamformer::scale(value(a), factor);
  return push(Node{.kind = OpKind::scale, .inputs = {a.id}, .value = std::move(out), .scalar = factor});
}

Var Graph::softmax(Var a) {
  Tensor out = softmax_lastdim(value(a));
  return push(Node{.kind = OpKind::softmax, .inputs = {a.id}, .value = std::move(out)});
}

Var Graph::leaky_relu(Var a, double slope) {
  Tensor out = apply_leaky_relu(value(a), slope);
  return push(Node{.kind = OpKind::leaky_relu, .inputs = {a.id}, .value = std::move(out), .scalar = slope});
}

Var Graph::affine(Var x, Var w, Var b, ActivationSpec act) {
  Tensor pre = lamformer::affine(value(x), value(w), value(b), {});
  Tensor out = act.kind == Activation::leaky_relu ? apply_leaky_relu(pre, act.slope) : pre;
  return push(Node{.kind = OpKind::affine,
                   .inputs = {x.id, w.id, b.id},
                   .value = std::move(out),
                   .aux = std::move(pre),
                   .act = act});
}

double Graph::kink_distance() const {
  double closest = std::numeric_limits<double>::infinity();
  for (const Node& n : nodes_) {
    const Tensor* pre = nullptr;
    if (n.kind == OpKind::leaky_relu) pre = &nodes_[n.inputs[0]].value;
    if (n.kind == OpKind::affine && n.act.kind == Activation::leaky_relu) pre = &n.aux;
    if (pre == nullptr) continue;
    for (double x : pre->data()) closest = std::min(closest, std::abs(x));
  }
  return closest;
}

Var Graph::gather_rows(Var m, std::vector<std::int64_t> indices, double pad) {
  Tensor out = gather_rows_padded(value(m), indices, pad);
  return push(Node{.kind = OpKind::gather_rows,
                   .inputs = {m.id},
                   .value = std::move(out),
                   .indices = std::move(indices)});
}

Var Graph::concat_rows(std::span<const Var> parts) {
  std::vector<Tensor> values;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    values.push_back(value(p));
    ids.push_back(p.id);
  }
  return push(Node{.kind = OpKind::concat_rows, .inputs = std::move(ids), .value = concat_axis0(values)});
}

Var Graph::concat_cols(std::span<const Var> parts) {
  std::vector<Tensor> values;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    values.push_back(value(p));
    ids.push_back(p.id);
  }
  return push(Node{.kind = OpKind::concat_cols, .inputs = std::move(ids), .value = concat_lastdim(values)});
}

Var Graph::reshape(Var a, Tensor::Shape shape) {
  return push(Node{.kind = OpKind::reshape, .inputs = {a.id}, .value = value(a).reshaped(std::move(shape))});
}

Var Graph::column_mean(Var a) {
  return push(Node{.kind = OpKind::column_mean, .inputs = {a.id}, .value = lamformer::column_mean(value(a))});
}

Var Graph::sum(Var a) {
  double total = 0.0;
  for (double v : value(a).data()) total += v;
  return push(Node{.kind = OpKind::sum, .inputs = {a.id}, .value = Tensor({1}, total)});
}

Var Graph::mse(Var pred, Tensor target) {
  const Tensor& p = value(pred);
  if (p.shape() != target.shape()) {
    throw DimensionError("mse shapes differ: " + shape_string(p.shape()) + " vs " +
                         shape_string(target.shape()));
  }
  double total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double e = p[k] - target[k];
    total += e * e;
  }
  return push(Node{.kind = OpKind::mse,
                   .inputs = {pred.id},
                   .value = Tensor({1}, total / static_cast<double>(p.size())),
                   .aux = std::move(target)});
}

Gradients Graph::backward(Var loss) const {
  if (node(loss).value.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        shape_string(node(loss).value.shape()));
  }

  // Only nodes that lead to a parameter need gradients.
  std::vector<char> needs(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& nd = nodes_[i];
    needs[i] = nd.kind == OpKind::parameter ||
               std::any_of(nd.inputs.begin(), nd.inputs.end(), [&](std::size_t k) { return needs[k] != 0; });
  }

  std::vector<Tensor> grads(nodes_.size());
  grads[loss.id] = Tensor(node(loss).value.shape(), 1.0);

  for (std::size_t id = loss.id + 1; id-- > 0;) {
    if (!needs[id] || grads[id].empty()) continue;
    const Node& nd = nodes_[id];
    const Tensor& g = grads[id];
    auto in = [&](std::size_t k) -> const Tensor& { return nodes_[nd.inputs[k]].value; };
    auto wants = [&](std::size_t k) { return needs[nd.inputs[k]] != 0; };

    switch (nd.kind) {
      case OpKind::constant:
      case OpKind::parameter:
        break;
      case OpKind::matmul: {
        if (wants(0)) accumulate(grads, nd.inputs[0], reduce_to_shape(lamformer::matmul_nt(g, in(1)), in(0).shape()));
        if (wants(1)) {
          Tensor gb = matmul_batched(transpose_last2(in(0)), g);
          accumulate(grads, nd.inputs[1], reduce_to_shape(std::move(gb), in(1).shape()));
        }
        break;
      }
      case OpKind::matmul_nt: {
        if (wants(0)) accumulate(grads, nd.inputs[0], reduce_to_shape(matmul_batched(g, in(1)), in(0).shape()));
        if (wants(1)) {
          Tensor gb = matmul_batched(transpose_last2(g), in(0));
          accumulate(grads, nd.inputs[1], reduce_to_shape(std::move(gb), in(1).shape()));
        }
        break;
      }
      case OpKind::add:
        if (wants(0)) accumulate(grads, nd.inputs[0], g);
        if (wants(1)) accumulate(grads, nd.inputs[1], g);
        break;
      case OpKind::add_constant:
        if (wants(0)) accumulate(grads, nd.inputs[0], g);
        break;
      case OpKind::scale:
        if (wants(0)) accumulate(grads, nd.inputs[0], lamformer::scale(g, nd.scalar));
        break;
      case OpKind::softmax: {
        // dx = y * (dy - <dy, y>) per row; masked entries have y = 0 exactly.
        const Tensor& y = nd.value;
        Tensor dx(y.shape());
        const std::size_t d = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const double* yr = y.row_ptr(r);
          const double* gr = g.row_ptr(r);
          double inner = 0.0;
          for (std::size_t j = 0; j < d; ++j) inner += gr[j] * yr[j];
          double* out = dx.row_ptr(r);
          for (std::size_t j = 0; j < d; ++j) out[j] = yr[j] * (gr[j] - inner);
        }
        accumulate(grads, nd.inputs[0], std::move(dx));
        break;
      }
      case OpKind::leaky_relu: {
        Tensor dx = g;
        const Tensor& x = in(0);
        for (std::size_t k = 0; k < dx.size(); ++k)
          if (x[k] < 0.0) dx[k] *= nd.scalar;
        accumulate(grads, nd.inputs[0], std::move(dx));
        break;
      }
      case OpKind::affine: {
        Tensor dz = g;
        if (nd.act.kind == Activation::leaky_relu) {
          for (std::size_t k = 0; k < dz.size(); ++k)
            if (nd.aux[k] < 0.0) dz[k] *= nd.act.slope;
        }
        if (wants(0)) accumulate(grads, nd.inputs[0], lamformer::matmul_nt(dz, in(1)));
        if (wants(1)) accumulate(grads, nd.inputs[1], matmul_batched(transpose_last2(in(0)), dz));
        if (wants(2)) {
          Tensor db(in(2).shape());
          for (std::size_t i = 0; i < dz.dim(0); ++i)
            for (std::size_t j = 0; j < dz.dim(1); ++j) db[j] += dz(i, j);
          accumulate(grads, nd.inputs[2], std::move(db));
        }
        break;
      }
      case OpKind::gather_rows: {
        const Tensor& m = in(0);
        Tensor dm(m.shape());
        const std::size_t d = m.cols();
        for (std::size_t k = 0; k < nd.indices.size(); ++k) {
          const std::int64_t src = nd.indices[k];
          if (src < 0 || static_cast<std::size_t>(src) >= m.dim(0)) continue;
          double* dst = dm.row_ptr(static_cast<std::size_t>(src));
          const double* gr = g.row_ptr(k);
          for (std::size_t j = 0; j < d; ++j) dst[j] += gr[j];
        }
        accumulate(grads, nd.inputs[0], std::move(dm));
        break;
      }
      case OpKind::concat_rows: {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < nd.inputs.size(); ++k) {
          const Tensor& part = in(k);
          if (wants(k)) {
            std::vector<double> slice(g.data().begin() + static_cast<std::ptrdiff_t>(offset),
                                      g.data().begin() + static_cast<std::ptrdiff_t>(offset + part.size()));
            accumulate(grads, nd.inputs[k], Tensor(part.shape(), std::move(slice)));
          }
          offset += part.size();
        }
        break;
      }
      case OpKind::concat_cols: {
        std::size_t col = 0;
        for (std::size_t k = 0; k < nd.inputs.size(); ++k) {
          const Tensor& part = in(k);
          const std::size_t w = part.dim(1);
          if (wants(k)) {
            Tensor slice(part.shape());
            for (std::size_t i = 0; i < part.dim(0); ++i)
              std::copy_n(g.row_ptr(i) + col, w, slice.row_ptr(i));
            accumulate(grads, nd.inputs[k], std::move(slice));
          }
          col += w;
        }
        break;
      }
      case OpKind::reshape:
        accumulate(grads, nd.inputs[0], g.reshaped(in(0).shape()));
        break;
      case OpKind::column_mean: {
        const Tensor& m = in(0);
        Tensor dm(m.shape());
        const double inv = 1.0 / static_cast<double>(m.dim(0));
        for (std::size_t i = 0; i < m.dim(0); ++i)
          for (std::size_t j = 0; j < m.dim(1); ++j) dm(i, j) = g[j] * inv;
        accumulate(grads, nd.inputs[0], std::move(dm));
        break;
      }
      case OpKind::sum:
        accumulate(grads, nd.inputs[0], Tensor(in(0).shape(), g[0]));
        break;
      case OpKind::mse: {
        const Tensor& p = in(0);
        Tensor dp(p.shape());
        const double factor = 2.0 * g[0] / static_cast<double>(p.size());
        for (std::size_t k = 0; k < p.size(); ++k) dp[k] = factor * (p[k] - nd.aux[k]);
        accumulate(grads, nd.inputs[0], std::move(dp));
        break;
      }
    }
  }

  Gradients out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& nd = nodes_[i];
    if (nd.kind != OpKind::parameter) continue;
    Tensor g = grads[i].empty() ? Tensor(nd.value.shape()) : std::move(grads[i]);
    if (auto it = out.find(*nd.param); it != out.end()) {
      it->second = lamformer::add(std::move(it->second), g);
    } else {
      out.emplace(*nd.param, std::move(g));
    }
  }
  return out;
}

Tensor finite_diff_grad(const ScalarFunction& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ContractError("finite difference step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double gradient_relative_error(const Tensor& analytic, const Tensor& numeric) {
  double scale_ref = 0.0;
  for (double v : numeric.data()) scale_ref = std::max(scale_ref, std::abs(v));
  return max_abs_diff(analytic, numeric) / std::max(1.0, scale_ref);
}

GradCheckResult check_gradients(const LossBuilder& build, const std::vector<Tensor>& inputs, double h) {
  Graph g;
  std::vector<Var> vars;
  for (std::size_t k = 0; k < inputs.size(); ++k) vars.push_back(g.parameter(k, inputs[k]));
  const Gradients analytic = g.backward(build(g, vars));

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Tensor& probe) {
      Graph pg;
      std::vector<Var> pv;
      for (std::size_t j = 0; j < inputs.size(); ++j) pv.push_back(pg.parameter(j, j == k ? probe : inputs[j]));
      return pg.value(build(pg, pv))[0];
    };
    const double err = gradient_relative_error(analytic.at(k), finite_diff_grad(f, inputs[k], h));
    result.per_input.push_back(err);
    result.worst_relative_error = std::max(result.worst_relative_error, err);
  }
  return result;
}

}  // namespace lamformer::ad
