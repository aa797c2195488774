#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "afloc/nn/layers.hpp"

namespace afloc::nn {

/// A sequential stack of layers with a recorded forward pass.
template <typename Scalar>
class Network {
 public:
  Network() = default;
  explicit Network(const std::vector<LayerSpec>& specs) {
    for (const auto& s : specs) add(s);
  }
  Network(const Network& other) : recorded_(other.recorded_) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Network& operator=(const Network& other) {
    if (this != &other) {
      Network tmp(other);
      std::swap(layers_, tmp.layers_);
      recorded_ = other.recorded_;
    }
    return *this;
  }
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  Network& add(const LayerSpec& spec) {
    layers_.push_back(make_layer<Scalar>(spec));
    return *this;
  }

  std::size_t depth() const { return layers_.size(); }
  Layer<Scalar>& layer(std::size_t i) { return *layers_[i]; }
  const Layer<Scalar>& layer(std::size_t i) const { return *layers_[i]; }

  Tensor<Scalar> forward(Tensor<Scalar> x, Mode mode) {
    for (auto& l : layers_) x = l->forward(x, mode);
    recorded_ = true;
    return x;
  }

  /// Back-propagates `seed` (dLoss/dOutput). Parameter gradients accumulate
  /// until zero_grad(); returns dLoss/dInput.
  Tensor<Scalar> backward(Tensor<Scalar> seed) {
    if (!recorded_) fail(ErrorCode::NoRecordedForward, "backward called without a recorded forward pass");
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) seed = (*it)->backward(seed);
    recorded_ = false;
    return seed;
  }

  std::vector<Param<Scalar>*> params() {
    std::vector<Param<Scalar>*> out;
    for (auto& l : layers_)
      for (auto* p : l->params()) out.push_back(p);
    return out;
  }

  /// Parameters and buffers under stable names "<layer index>.<name>".
  std::vector<std::pair<std::string, Tensor<Scalar>*>> named_state() {
    std::vector<std::pair<std::string, Tensor<Scalar>*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string prefix = std::to_string(i) + ".";
      for (auto* p : layers_[i]->params()) out.emplace_back(prefix + p->name, &p->value);
      for (auto& [name, t] : layers_[i]->buffers()) out.emplace_back(prefix + name, t);
    }
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->grad.data().setZero();
  }

  Index parameter_count() {
    Index n = 0;
    for (auto* p : params()) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
  bool recorded_ = false;
};

enum class InitScheme {
  /// N(0, 0.02) weights, zero bias, unit batch-norm scale.
  Dcgan,
  /// N(0, sqrt(2 / fan_in)) weights for relu stacks.
  He,
};

template <typename Scalar>
void initialize(Network<Scalar>& net, std::uint64_t seed, InitScheme scheme = InitScheme::Dcgan) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < net.depth(); ++i) {
    auto& layer = net.layer(i);
    const auto kind = layer.spec().kind;
    if (kind == LayerKind::BatchNorm) {
      auto ps = layer.params();
      ps[0]->value.data().setOnes();
      ps[1]->value.data().setZero();
      continue;
    }
    for (auto* p : layer.params()) {
      if (p->name != "weight") {
        p->value.data().setZero();
        continue;
      }
      double stddev = 0.02;
      if (scheme == InitScheme::He) {
        const Index fan_in = kind == LayerKind::Conv2dTranspose ? p->value.dim(0) : p->value.dim(1);
        stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      }
      std::normal_distribution<double> normal(0.0, stddev);
      for (Index j = 0; j < p->value.size(); ++j) p->value[j] = static_cast<Scalar>(normal(rng));
    }
  }
}

}  // namespace afloc::nn
