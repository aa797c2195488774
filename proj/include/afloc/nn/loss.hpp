#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "afloc/nn/tensor.hpp"

namespace afloc::nn {

/// Row-wise softmax of (N, M) logits.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  Tensor<Scalar> p(logits.shape());
  auto out = p.as_matrix();
  const auto in = logits.as_matrix();
  for (Index i = 0; i < in.rows(); ++i) {
    const Scalar mx = in.row(i).maxCoeff();
    out.row(i) = (in.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return p;
}

template <typename Scalar>
struct LossResult {
  Scalar loss;
  Tensor<Scalar> grad;  // d loss / d logits
};

/// Mean cross-entropy of softmax(logits) against integer class labels.
template <typename Scalar>
LossResult<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != logits.batch())
    fail(ErrorCode::ShapeMismatch, "label count does not match batch");
  Tensor<Scalar> p = softmax(logits);
  auto pm = p.as_matrix();
  const auto n = static_cast<Scalar>(logits.batch());
  Scalar loss = 0;
  for (Index i = 0; i < pm.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= pm.cols()) fail(ErrorCode::InvalidArgument, "label out of range");
    loss -= std::log(std::max(pm(i, y), std::numeric_limits<Scalar>::min()));
    pm(i, y) -= Scalar(1);
  }
  pm /= n;
  return {loss / n, std::move(p)};
}

}  // namespace afloc::nn
