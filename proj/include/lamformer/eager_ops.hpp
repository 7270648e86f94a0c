#pragma once

#include <span>
#include <utility>
#include <vector>

#include "lamformer/tensor.hpp"

namespace lamformer {

// Evaluation policy that computes tensor values directly.
//
// Attention kernels and the forecasting model are written once against a
// small policy interface; EagerOps runs them on plain tensors, ad::GraphOps
// records them on a tape for reverse-mode differentiation.
struct EagerOps {
  using Value = Tensor;

  const Tensor& value(const Tensor& v) const noexcept { return v; }
  Tensor constant(Tensor t) const { return t; }

  Tensor matmul(const Tensor& a, const Tensor& b) const { return matmul_batched(a, b); }
  Tensor matmul_nt(const Tensor& a, const Tensor& b) const { return lamformer::matmul_nt(a, b); }
  Tensor add(Tensor a, const Tensor& b) const { return lamformer::add(std::move(a), b); }
  Tensor add_constant(Tensor a, const Tensor& c) const { return lamformer::add(std::move(a), c); }
  Tensor scale(Tensor a, double factor) const { return lamformer::scale(std::move(a), factor); }
  Tensor softmax(Tensor a) const { return softmax_lastdim(std::move(a)); }
  Tensor leaky_relu(Tensor a, double slope) const { return apply_leaky_relu(std::move(a), slope); }
  Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b, ActivationSpec act) const {
    return lamformer::affine(x, w, b, act);
  }
  Tensor gather_rows(const Tensor& m, std::vector<std::int64_t> indices, double pad) const {
    return gather_rows_padded(m, indices, pad);
  }
  Tensor concat_rows(std::span<const Tensor> parts) const { return concat_axis0(parts); }
  Tensor concat_cols(std::span<const Tensor> parts) const { return concat_lastdim(parts); }
  Tensor reshape(Tensor a, Tensor::Shape shape) const { return std::move(a).reshaped(std::move(shape)); }
  Tensor column_mean(const Tensor& m) const { return lamformer::column_mean(m); }
};

}  // namespace lamformer
