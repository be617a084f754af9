#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace skelreid {

using Index = Eigen::Index;

/// Thrown when tensor extents do not line up for an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Shape = std::vector<Index>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

/// Dense row-major tensor. Values live in an Eigen vector so whole-tensor
/// arithmetic can be written as Eigen expressions on values(); matrix()
/// reinterprets the storage as a row-major 2-D view without copying.
template <typename Scalar>
class Tensor {
 public:
  using Vector = ColVector<Scalar>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    for (Index extent : shape_) {
      if (extent < 0) throw ShapeError("negative tensor extent in " + shape_string(shape_));
    }
    values_ = Vector::Zero(shape_size(shape_));
  }

  Tensor(Shape shape, Vector values) : Tensor(std::move(shape)) {
    if (values.size() != values_.size()) {
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                       shape_string(shape_));
    }
    values_ = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return values_.size(); }
  bool empty() const { return shape_.empty(); }

  Vector& values() { return values_; }
  const Vector& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  Scalar& operator[](Index i) { return values_[i]; }
  Scalar operator[](Index i) const { return values_[i]; }

  Scalar& operator()(Index i, Index j) { return values_[i * shape_[1] + j]; }
  Scalar operator()(Index i, Index j) const { return values_[i * shape_[1] + j]; }

  Scalar& operator()(Index i, Index j, Index k) {
    return values_[(i * shape_[1] + j) * shape_[2] + k];
  }
  Scalar operator()(Index i, Index j, Index k) const {
    return values_[(i * shape_[1] + j) * shape_[2] + k];
  }

  MatrixMap matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return MatrixMap(values_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(values_.data(), rows, cols);
  }

  /// View as leading-extent x (product of the rest).
  MatrixMap matrix() { return matrix(dim(0), size() / std::max<Index>(dim(0), 1)); }
  ConstMatrixMap matrix() const { return matrix(dim(0), size() / std::max<Index>(dim(0), 1)); }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

  void set_zero() { values_.setZero(); }

  bool all_finite() const { return values_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void check_view(Index rows, Index cols) const {
    if (rows * cols != values_.size()) {
      throw ShapeError("cannot view " + shape_string(shape_) + " as " + std::to_string(rows) + "x" +
                       std::to_string(cols));
    }
  }

  Shape shape_;
  Vector values_;
};

/// A learnable tensor with its gradient and optimizer state.
template <typename Scalar>
struct ParamTensor {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  Tensor<Scalar> velocity;

  ParamTensor() = default;
  explicit ParamTensor(Shape shape) : value(shape), grad(shape), velocity(std::move(shape)) {}
  explicit ParamTensor(Tensor<Scalar> initial)
      : value(std::move(initial)), grad(value.shape()), velocity(value.shape()) {}

  const Shape& shape() const { return value.shape(); }
  void zero_grad() { grad.set_zero(); }
};

// ---------------------------------------------------------------------------
// matmul

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor<Scalar> out({a.dim(0), b.dim(1)});
  out.matrix(a.dim(0), b.dim(1)).noalias() =
      a.matrix(a.dim(0), a.dim(1)) * b.matrix(b.dim(0), b.dim(1));
  return out;
}

template <typename Scalar>
struct MatmulGrads {
  Tensor<Scalar> da;
  Tensor<Scalar> db;
};

template <typename Scalar>
MatmulGrads<Scalar> matmul_backward(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                                    const Tensor<Scalar>& dout) {
  if (dout.rank() != 2 || dout.dim(0) != a.dim(0) || dout.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_backward: upstream gradient " + shape_string(dout.shape()));
  }
  const auto am = a.matrix(a.dim(0), a.dim(1));
  const auto bm = b.matrix(b.dim(0), b.dim(1));
  const auto dm = dout.matrix(dout.dim(0), dout.dim(1));
  MatmulGrads<Scalar> grads{Tensor<Scalar>(a.shape()), Tensor<Scalar>(b.shape())};
  grads.da.matrix(a.dim(0), a.dim(1)).noalias() = dm * bm.transpose();
  grads.db.matrix(b.dim(0), b.dim(1)).noalias() = am.transpose() * dm;
  return grads;
}

// ---------------------------------------------------------------------------
// Strided temporal convolution over C x T x J feature maps.
//
// Zero padding is (W - s) / 2 frames before and the remainder after, so the
// output length is floor(T / s) for every T >= 1. For W = 9, s = 2 this is
// padding (3, 4) and the chain 50 -> 25 -> 12 -> 6 -> 3 -> 1.

struct TemporalGeometry {
  Index channels = 0;
  Index frames = 0;
  Index nodes = 0;
  Index width = 0;
  Index stride = 0;

  Index pad_before() const { return (width - stride) / 2; }
  Index out_frames() const { return frames / stride; }
};

template <typename Scalar>
TemporalGeometry temporal_geometry(const Tensor<Scalar>& x, Index width, Index stride) {
  if (x.rank() != 3) throw ShapeError("conv_temporal: input must be C x T x J, got " + shape_string(x.shape()));
  if (x.dim(1) == 0) throw ShapeError("conv_temporal: input has no frames");
  if (stride < 1 || width < stride) throw ShapeError("conv_temporal: need 1 <= stride <= width");
  return TemporalGeometry{x.dim(0), x.dim(1), x.dim(2), width, stride};
}

/// Unfolds x into a (C*W) x (T'*J) matrix; row c*W + w holds tap w of
/// channel c, matching the C' x C x W kernel layout viewed as C' x (C*W).
template <typename Scalar>
RowMatrix<Scalar> temporal_unfold(const Tensor<Scalar>& x, const TemporalGeometry& g) {
  const Index out_t = g.out_frames();
  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(g.channels * g.width, out_t * g.nodes);
  const Scalar* src = x.data();
  for (Index c = 0; c < g.channels; ++c) {
    for (Index w = 0; w < g.width; ++w) {
      Scalar* row = cols.row(c * g.width + w).data();
      for (Index t = 0; t < out_t; ++t) {
        const Index in_t = t * g.stride + w - g.pad_before();
        if (in_t < 0 || in_t >= g.frames) continue;
        const Scalar* from = src + (c * g.frames + in_t) * g.nodes;
        std::copy(from, from + g.nodes, row + t * g.nodes);
      }
    }
  }
  return cols;
}

template <typename Scalar>
void temporal_fold_add(const RowMatrix<Scalar>& cols, const TemporalGeometry& g, Tensor<Scalar>& dx) {
  const Index out_t = g.out_frames();
  Scalar* dst = dx.data();
  for (Index c = 0; c < g.channels; ++c) {
    for (Index w = 0; w < g.width; ++w) {
      const Scalar* row = cols.row(c * g.width + w).data();
      for (Index t = 0; t < out_t; ++t) {
        const Index in_t = t * g.stride + w - g.pad_before();
        if (in_t < 0 || in_t >= g.frames) continue;
        Scalar* to = dst + (c * g.frames + in_t) * g.nodes;
        const Scalar* from = row + t * g.nodes;
        for (Index j = 0; j < g.nodes; ++j) to[j] += from[j];
      }
    }
  }
}

template <typename Scalar>
void check_temporal_kernel(const Tensor<Scalar>& kernel, const TemporalGeometry& g) {
  if (kernel.rank() != 3 || kernel.dim(1) != g.channels || kernel.dim(2) != g.width) {
    throw ShapeError("conv_temporal: kernel " + shape_string(kernel.shape()) + " does not fit " +
                     std::to_string(g.channels) + " input channels");
  }
}

template <typename Scalar>
Tensor<Scalar> conv_temporal(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, Index stride = 2) {
  const auto g = temporal_geometry(x, kernel.rank() == 3 ? kernel.dim(2) : 0, stride);
  check_temporal_kernel(kernel, g);
  const Index out_c = kernel.dim(0);
  Tensor<Scalar> out({out_c, g.out_frames(), g.nodes});
  if (out.size() == 0) return out;
  const RowMatrix<Scalar> cols = temporal_unfold(x, g);
  out.matrix(out_c, g.out_frames() * g.nodes).noalias() = kernel.matrix(out_c, g.channels * g.width) * cols;
  return out;
}

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> dx;
  Tensor<Scalar> dkernel;
};

template <typename Scalar>
ConvGrads<Scalar> conv_temporal_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel,
                                         const Tensor<Scalar>& dout, Index stride = 2) {
  const auto g = temporal_geometry(x, kernel.rank() == 3 ? kernel.dim(2) : 0, stride);
  check_temporal_kernel(kernel, g);
  const Index out_c = kernel.dim(0);
  if (dout.shape() != Shape{out_c, g.out_frames(), g.nodes}) {
    throw ShapeError("conv_temporal_backward: upstream gradient " + shape_string(dout.shape()));
  }
  ConvGrads<Scalar> grads{Tensor<Scalar>(x.shape()), Tensor<Scalar>(kernel.shape())};
  if (dout.size() == 0) return grads;
  const auto dmat = dout.matrix(out_c, g.out_frames() * g.nodes);
  const RowMatrix<Scalar> cols = temporal_unfold(x, g);
  grads.dkernel.matrix(out_c, g.channels * g.width).noalias() = dmat * cols.transpose();
  const RowMatrix<Scalar> dcols = kernel.matrix(out_c, g.channels * g.width).transpose() * dmat;
  temporal_fold_add(dcols, g, grads.dx);
  return grads;
}

// ---------------------------------------------------------------------------
// L3 pooling: per row c, (sum_j |x[c,j]|^3)^(1/3).

template <typename Scalar>
Tensor<Scalar> l3_pool(const Tensor<Scalar>& x) {
  if (x.rank() < 1 || x.dim(0) == 0) throw ShapeError("l3_pool: empty input");
  const auto m = x.matrix();
  Tensor<Scalar> out({x.dim(0)});
  for (Index c = 0; c < m.rows(); ++c) {
    out[c] = std::cbrt(m.row(c).array().abs().cube().sum());
  }
  return out;
}

/// d out[c] / d x[c,j] = sign(x) x^2 / out[c]^2; zero for an all-zero row.
template <typename Scalar>
Tensor<Scalar> l3_pool_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& pooled,
                                const Tensor<Scalar>& dout) {
  if (pooled.size() != x.dim(0) || dout.size() != x.dim(0)) {
    throw ShapeError("l3_pool_backward: gradient length does not match " + shape_string(x.shape()));
  }
  Tensor<Scalar> dx(x.shape());
  const auto m = x.matrix();
  auto dm = dx.matrix();
  for (Index c = 0; c < m.rows(); ++c) {
    const Scalar norm = pooled[c];
    if (norm == Scalar(0)) continue;
    const Scalar scale = dout[c] / (norm * norm);
    dm.row(c) = scale * (m.row(c).array() * m.row(c).array().abs()).matrix();
  }
  return dx;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  return Tensor<Scalar>(x.shape(), x.values().cwiseMax(Scalar(0)));
}

/// Gradient through ReLU given the pre-activation input.
template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& pre, const Tensor<Scalar>& dout) {
  return Tensor<Scalar>(pre.shape(),
                        (pre.values().array() > Scalar(0)).select(dout.values(), Scalar(0)).matrix());
}

}  // namespace skelreid
