#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "afloc/nn/layers.hpp"

namespace afloc::nn {

/// RMSProp accumulator: s <- decay * s + (1 - decay) * g^2, step = g / sqrt(s + eps).
template <typename Scalar>
struct RmsPropState {
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> mean_square;
  Scalar decay = Scalar(0.9);
  Scalar epsilon = Scalar(1e-8);

  RmsPropState() = default;
  RmsPropState(Scalar d, Scalar e) : decay(d), epsilon(e) {}

  void validate() const {
    if (!(decay > 0 && decay < 1) || !(epsilon > 0))
      fail(ErrorCode::InvalidArgument, "RMSProp needs 0 < decay < 1 and epsilon > 0");
  }
};

/// Advances the accumulator for every parameter and returns the per-parameter
/// steps g / sqrt(s + eps). The caller applies +/- lr * step.
template <typename Scalar>
std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> rmsprop_steps(
    const std::vector<Param<Scalar>*>& params, RmsPropState<Scalar>& state) {
  state.validate();
  if (state.mean_square.empty()) {
    for (auto* p : params) state.mean_square.push_back(Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(p->value.size()));
  }
  if (state.mean_square.size() != params.size())
    fail(ErrorCode::ShapeMismatch, "RMSProp state does not match parameter list");
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> steps;
  steps.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& s = state.mean_square[i];
    const auto& g = params[i]->grad.data();
    if (s.size() != g.size()) fail(ErrorCode::ShapeMismatch, "RMSProp state shape mismatch");
    s = state.decay * s.array() + (Scalar(1) - state.decay) * g.array().square();
    steps.push_back((g.array() / (s.array() + state.epsilon).sqrt()).matrix());
  }
  return steps;
}

enum class StepDirection { Ascend, Descend };

/// params <- params +/- lr * RMSProp(params, grads).
template <typename Scalar>
void rmsprop_step(const std::vector<Param<Scalar>*>& params, RmsPropState<Scalar>& state, Scalar lr,
                  StepDirection dir) {
  const auto steps = rmsprop_steps(params, state);
  const Scalar sign = dir == StepDirection::Ascend ? Scalar(1) : Scalar(-1);
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.data() += sign * lr * steps[i];
}

/// Clamps every parameter into [-c, c]; returns how many values moved.
template <typename Scalar>
Index clip_weights(const std::vector<Param<Scalar>*>& params, Scalar c) {
  if (!(c > 0)) fail(ErrorCode::InvalidArgument, "clip bound must be positive");
  Index clipped = 0;
  for (auto* p : params) {
    auto v = p->value.data().array();
    clipped += (v > c).count() + (v < -c).count();
    v = v.min(c).max(-c);
  }
  return clipped;
}

}  // namespace afloc::nn
