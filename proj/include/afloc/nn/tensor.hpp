#pragma once

#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "afloc/errors.hpp"

namespace afloc::nn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

/// Dense row-major tensor, batch first (N, C, H, W) for images and (N, F)
/// for feature vectors.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector::Zero(shape_size(shape_))) {}
  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      fail(ErrorCode::ShapeMismatch, "data length does not match shape " + shape_string(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_[static_cast<std::size_t>(i)]; }
  Index size() const { return data_.size(); }
  Index batch() const { return shape_.empty() ? 0 : shape_[0]; }
  Index per_sample() const { return batch() == 0 ? 0 : size() / batch(); }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }
  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Whole tensor viewed as (batch, per_sample).
  MatrixMap as_matrix() { return MatrixMap(ptr(), batch(), per_sample()); }
  ConstMatrixMap as_matrix() const { return ConstMatrixMap(ptr(), batch(), per_sample()); }

  /// Sample n viewed as (rows, cols); rows * cols must equal per_sample().
  MatrixMap sample(Index n, Index rows, Index cols) {
    return MatrixMap(ptr() + n * per_sample(), rows, cols);
  }
  ConstMatrixMap sample(Index n, Index rows, Index cols) const {
    return ConstMatrixMap(ptr() + n * per_sample(), rows, cols);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      fail(ErrorCode::ShapeMismatch, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Shape shape_;
  Vector data_;
};

}  // namespace afloc::nn
