#include "lamformer/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <thread>

namespace lamformer {

namespace {

std::size_t shape_product(const Tensor::Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_rank(const Tensor::Shape& shape) {
  if (shape.empty() || shape.size() > 3) {
    throw DimensionError("tensor rank must be 1..3, got shape " + shape_string(shape));
  }
}

thread_local std::uint64_t g_dot_products = 0;
std::atomic<unsigned> g_matmul_threads{1};

struct BatchView {
  std::size_t batch, rows, cols;
};

BatchView as_batch(const Tensor& t) {
  if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  throw DimensionError("batched product needs rank 2 or 3, got " + shape_string(t.shape()));
}

// Runs body(b) for every batch index, fanning out over worker threads when
// configured. Each b writes a disjoint output slice.
template <class Body>
void for_each_batch(std::size_t batch, const Body& body) {
  unsigned threads = std::min<std::size_t>(g_matmul_threads.load(), batch);
  if (threads <= 1) {
    for (std::size_t b = 0; b < batch; ++b) body(b);
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(threads);
  for (unsigned w = 0; w < threads; ++w) {
    workers.emplace_back([&, w] {
      for (std::size_t b = w; b < batch; b += threads) body(b);
    });
  }
}

Tensor::Shape product_shape(const Tensor& a, const Tensor& b, std::size_t batch, std::size_t rows,
                            std::size_t cols) {
  if (a.rank() == 3 || b.rank() == 3) return {batch, rows, cols};
  return {rows, cols};
}

std::size_t common_batch(const Tensor& a, const Tensor& b, const BatchView& va,
                         const BatchView& vb) {
  if (va.batch == vb.batch) return va.batch;
  if (a.rank() == 2 && va.batch == 1) return vb.batch;
  if (b.rank() == 2 && vb.batch == 1) return va.batch;
  throw DimensionError("batch extents differ: " + shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_rank(shape_);
  data_.assign(shape_product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_rank(shape_);
  if (shape_product(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t d = n == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(n * d);
  for (const auto& row : rows) {
    if (row.size() != d) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({n, d}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape_));
  }
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  check_rank(shape);
  if (shape_product(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

bool Tensor::has_nan() const noexcept {
  return std::any_of(data_.begin(), data_.end(), [](double v) { return std::isnan(v); });
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff shapes differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k] == b[k]) continue;
    worst = std::max(worst, std::abs(a[k] - b[k]));
  }
  return worst;
}

std::uint64_t dot_product_tally() noexcept { return g_dot_products; }
void reset_dot_product_tally() noexcept { g_dot_products = 0; }
void set_matmul_threads(unsigned threads) noexcept { g_matmul_threads = std::max(1u, threads); }
unsigned matmul_threads() noexcept { return g_matmul_threads.load(); }

Tensor matmul_batched(const Tensor& a, const Tensor& b) {
  const BatchView va = as_batch(a);
  const BatchView vb = as_batch(b);
  const std::size_t batch = common_batch(a, b, va, vb);
  if (va.cols != vb.rows) {
    throw DimensionError("matmul inner extents differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const std::size_t p = va.rows, q = va.cols, r = vb.cols;
  Tensor out(product_shape(a, b, batch, p, r));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  const std::size_t stride_a = va.batch == 1 ? 0 : p * q;
  const std::size_t stride_b = vb.batch == 1 ? 0 : q * r;
  for_each_batch(batch, [&](std::size_t bi) {
    const double* __restrict A = pa + bi * stride_a;
    const double* __restrict B = pb + bi * stride_b;
    double* __restrict O = po + bi * p * r;
    for (std::size_t i = 0; i < p; ++i) {
      double* __restrict orow = O + i * r;
      for (std::size_t t = 0; t < q; ++t) {
        const double av = A[i * q + t];
        const double* __restrict brow = B + t * r;
        for (std::size_t j = 0; j < r; ++j) orow[j] += av * brow[j];
      }
    }
  });
  g_dot_products += batch * p * r;
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const BatchView va = as_batch(a);
  const BatchView vb = as_batch(b);
  const std::size_t batch = common_batch(a, b, va, vb);
  if (va.cols != vb.cols) {
    throw DimensionError("matmul_nt inner extents differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + "^T");
  }
  const std::size_t p = va.rows, q = va.cols, r = vb.rows;
  Tensor out(product_shape(a, b, batch, p, r));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  const std::size_t stride_a = va.batch == 1 ? 0 : p * q;
  const std::size_t stride_b = vb.batch == 1 ? 0 : r * q;
  for_each_batch(batch, [&](std::size_t bi) {
    const double* __restrict A = pa + bi * stride_a;
    const double* __restrict B = pb + bi * stride_b;
    double* __restrict O = po + bi * p * r;
    for (std::size_t i = 0; i < p; ++i) {
      const double* arow = A + i * q;
      for (std::size_t j = 0; j < r; ++j) {
        const double* brow = B + j * q;
        double acc = 0.0;
        for (std::size_t t = 0; t < q; ++t) acc += arow[t] * brow[t];
        O[i * r + j] = acc;
      }
    }
  });
  g_dot_products += batch * p * r;
  return out;
}

Tensor transpose_last2(const Tensor& t) {
  const BatchView v = as_batch(t);
  Tensor out(t.rank() == 3 ? Tensor::Shape{v.batch, v.cols, v.rows}
                           : Tensor::Shape{v.cols, v.rows});
  for (std::size_t b = 0; b < v.batch; ++b) {
    const double* src = t.data().data() + b * v.rows * v.cols;
    double* dst = out.data().data() + b * v.rows * v.cols;
    for (std::size_t i = 0; i < v.rows; ++i)
      for (std::size_t j = 0; j < v.cols; ++j) dst[j * v.rows + i] = src[i * v.cols + j];
  }
  return out;
}

Tensor softmax_lastdim(Tensor t) {
  const std::size_t d = t.cols();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double* row = t.row_ptr(r);
    double peak = kNegInf;
    for (std::size_t j = 0; j < d; ++j) {
      if (std::isnan(row[j])) throw NumericError("softmax input row " + std::to_string(r) + " has NaN");
      peak = std::max(peak, row[j]);
    }
    if (!std::isfinite(peak)) {
      throw DegenerateRowError("softmax row " + std::to_string(r) + " has no finite entry");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      row[j] = std::exp(row[j] - peak);
      total += row[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < d; ++j) row[j] *= inv;
  }
  return t;
}

Tensor gather_rows_padded(const Tensor& m, std::span<const std::int64_t> indices, double pad) {
  if (m.rank() != 2) throw DimensionError("gather_rows_padded needs a matrix, got " + shape_string(m.shape()));
  const std::size_t n = m.dim(0), d = m.dim(1);
  Tensor out({indices.size(), d});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    double* dst = out.row_ptr(k);
    const std::int64_t src = indices[k];
    if (src >= 0 && static_cast<std::size_t>(src) < n) {
      std::copy_n(m.row_ptr(static_cast<std::size_t>(src)), d, dst);
    } else {
      std::fill_n(dst, d, pad);
    }
  }
  return out;
}

Tensor concat_axis0(std::span<const Tensor> blocks) {
  if (blocks.empty()) throw DimensionError("concat_axis0 of zero blocks");
  const std::size_t d = blocks.front().cols();
  std::size_t rows = 0;
  for (const Tensor& b : blocks) {
    if (b.rank() != 2 || b.cols() != d) {
      throw DimensionError("concat_axis0 trailing extents differ: " +
                           shape_string(blocks.front().shape()) + " vs " + shape_string(b.shape()));
    }
    rows += b.dim(0);
  }
  std::vector<double> data;
  data.reserve(rows * d);
  for (const Tensor& b : blocks) data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor({rows, d}, std::move(data));
}

Tensor concat_lastdim(std::span<const Tensor> blocks) {
  if (blocks.empty()) throw DimensionError("concat_lastdim of zero blocks");
  const std::size_t n = blocks.front().dim(0);
  std::size_t width = 0;
  for (const Tensor& b : blocks) {
    if (b.rank() != 2 || b.dim(0) != n) {
      throw DimensionError("concat_lastdim row counts differ: " +
                           shape_string(blocks.front().shape()) + " vs " + shape_string(b.shape()));
    }
    width += b.dim(1);
  }
  Tensor out({n, width});
  for (std::size_t i = 0; i < n; ++i) {
    double* dst = out.row_ptr(i);
    for (const Tensor& b : blocks) dst = std::copy_n(b.row_ptr(i), b.dim(1), dst);
  }
  return out;
}

Tensor column_mean(const Tensor& m) {
  if (m.rank() != 2 || m.dim(0) == 0) {
    throw DimensionError("column_mean needs a non-empty matrix, got " + shape_string(m.shape()));
  }
  const std::size_t n = m.dim(0), d = m.dim(1);
  Tensor out({1, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += m(i, j);
  for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(n);
  return out;
}

double leaky_relu(double x, double slope) noexcept { return x >= 0.0 ? x : slope * x; }

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b, ActivationSpec act) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0) || b.size() != w.dim(1)) {
    throw DimensionError("affine shapes incompatible: x " + shape_string(x.shape()) + ", w " +
                         shape_string(w.shape()) + ", b " + shape_string(b.shape()));
  }
  Tensor out = matmul_batched(x, w);
  const std::size_t q = w.dim(1);
  for (std::size_t i = 0; i < out.dim(0); ++i) {
    double* row = out.row_ptr(i);
    for (std::size_t j = 0; j < q; ++j) {
      row[j] += b[j];
      if (act.kind == Activation::leaky_relu) row[j] = leaky_relu(row[j], act.slope);
    }
  }
  return out;
}

Tensor add(Tensor a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add shapes differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
  return a;
}

Tensor sub(Tensor a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("sub shapes differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  for (std::size_t k = 0; k < a.size(); ++k) a[k] -= b[k];
  return a;
}

Tensor scale(Tensor a, double factor) {
  for (double& v : a.data()) v *= factor;
  return a;
}

Tensor apply_leaky_relu(Tensor a, double slope) {
  for (double& v : a.data()) v = leaky_relu(v, slope);
  return a;
}

}  // namespace lamformer
