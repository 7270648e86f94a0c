#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lamformer/errors.hpp"

namespace lamformer {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Dense row-major tensor of rank 1..3 holding 64-bit reals.
//
// Entries may be -inf (mask sentinel, pre-softmax scores) but never NaN at an
// operation boundary. Value semantic: copies are deep, moves are cheap.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  // 2-D literal, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Extent of the last axis, and the number of rows it partitions the data into.
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t rows() const noexcept { return cols() == 0 ? 0 : data_.size() / cols(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* row_ptr(std::size_t r) noexcept { return data_.data() + r * cols(); }
  const double* row_ptr(std::size_t r) const noexcept { return data_.data() + r * cols(); }

  double& operator[](std::size_t flat) noexcept { return data_[flat]; }
  double operator[](std::size_t flat) const noexcept { return data_[flat]; }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * shape_.back() + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * shape_.back() + j];
  }
  double& operator()(std::size_t b, std::size_t i, std::size_t j) noexcept {
    return data_[(b * shape_[1] + i) * shape_[2] + j];
  }
  double operator()(std::size_t b, std::size_t i, std::size_t j) const noexcept {
    return data_[(b * shape_[1] + i) * shape_[2] + j];
  }

  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  bool has_nan() const noexcept;
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::string shape_string(const Tensor::Shape& shape);

// Largest absolute elementwise difference. Matching -inf entries count as 0.
double max_abs_diff(const Tensor& a, const Tensor& b);

// --- dot-product accounting -------------------------------------------------
//
// Every matrix product goes through matmul_batched / matmul_nt, which add the
// number of output entries (one vector dot product each) to a per-thread tally.

std::uint64_t dot_product_tally() noexcept;
void reset_dot_product_tally() noexcept;

// Number of worker threads batched products may fan out to. Output does not
// depend on this value: every entry is summed in a fixed order.
void set_matmul_threads(unsigned threads) noexcept;
unsigned matmul_threads() noexcept;

// --- primitives -------------------------------------------------------------

// out[b,i,j] = sum_t a[b,i,t] * b[b,t,j]. Rank-2 operands act as batch 1.
Tensor matmul_batched(const Tensor& a, const Tensor& b);

// out[b,i,j] = sum_t a[b,i,t] * b[b,j,t], i.e. a * transpose(b) on the last
// two axes without materialising the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Transpose of the last two axes.
Tensor transpose_last2(const Tensor& t);

// Row-wise softmax over the last axis with max subtraction. -inf inputs map to
// exactly 0. Throws DegenerateRowError on a row without a finite entry.
Tensor softmax_lastdim(Tensor t);

// out[k,:] = m[indices[k],:] for in-range indices, otherwise `pad` everywhere.
Tensor gather_rows_padded(const Tensor& m, std::span<const std::int64_t> indices, double pad);

// Stack row blocks sharing the trailing extent.
Tensor concat_axis0(std::span<const Tensor> blocks);

// Join 2-D blocks sharing the row count along the last axis.
Tensor concat_lastdim(std::span<const Tensor> blocks);

// Column-wise mean of an n x d matrix as a 1 x d row (rows summed in order).
Tensor column_mean(const Tensor& m);

enum class Activation { none, leaky_relu };

struct ActivationSpec {
  Activation kind = Activation::none;
  double slope = 0.01;
};

double leaky_relu(double x, double slope) noexcept;

// act(x * w + b) with x: n x p, w: p x q, b: q.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b, ActivationSpec act = {});

Tensor add(Tensor a, const Tensor& b);
Tensor sub(Tensor a, const Tensor& b);
Tensor scale(Tensor a, double factor);
Tensor apply_leaky_relu(Tensor a, double slope);

}  // namespace lamformer
