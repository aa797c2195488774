#pragma once
// Central finite-difference checks shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <random>

#include "afloc/nn/layers.hpp"

namespace gradcheck {

using afloc::nn::Index;
using afloc::nn::LayerKind;
using afloc::nn::LayerSpec;
using afloc::nn::Mode;
using afloc::nn::Shape;
using afloc::nn::Tensor;

inline double rel_err(double a, double n) {
  // Floor keeps entries that are both ~0 from dominating.
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

struct Instance {
  LayerSpec spec;
  Shape input;
};

/// Random small instance of `kind` on 5x5 spatial inputs.
inline Instance random_instance(LayerKind kind, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> ch(1, 3), k(1, 3), s(1, 2), p(0, 1), n(1, 3);
  const Index batch = n(rng);
  const Index c = ch(rng);
  Instance in{LayerSpec{}, {batch, c, 5, 5}};
  switch (kind) {
    case LayerKind::Conv2d: {
      const Index kk = k(rng);
      in.spec = LayerSpec::conv2d(c, ch(rng), kk, s(rng), std::min<Index>(p(rng), kk - 1));
      break;
    }
    case LayerKind::Conv2dTranspose: {
      const Index kk = k(rng) + 1;
      in.spec = LayerSpec::conv2d_transpose(c, ch(rng), kk, s(rng), std::min<Index>(p(rng), kk - 1));
      break;
    }
    case LayerKind::FullyConnected:
      in.spec = LayerSpec::fully_connected(c * 25, {ch(rng), 2});
      break;
    case LayerKind::BatchNorm:
      in.input[0] = batch + 1;
      in.spec = LayerSpec::batch_norm(c);
      break;
    case LayerKind::Relu: in.spec = LayerSpec::relu(); break;
    case LayerKind::LeakyRelu: in.spec = LayerSpec::leaky_relu(0.2); break;
    case LayerKind::Tanh: in.spec = LayerSpec::tanh(); break;
    case LayerKind::MaxPool2d: in.spec = LayerSpec::max_pool2d(2); break;
  }
  return in;
}

/// Inputs kept clear of the kinks of relu/leaky relu and of max-pool ties,
/// so a finite-difference step never crosses a non-differentiable point.
inline Tensor<double> safe_input(const Instance& in, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor<double> x(in.input);
  for (;;) {
    for (Index i = 0; i < x.size(); ++i) x[i] = g(rng);
    bool ok = true;
    if (in.spec.kind == LayerKind::Relu || in.spec.kind == LayerKind::LeakyRelu)
      for (Index i = 0; i < x.size(); ++i) ok = ok && std::abs(x[i]) > 1e-3;
    if (in.spec.kind == LayerKind::MaxPool2d) {
      std::vector<double> v(x.data().data(), x.data().data() + x.size());
      std::sort(v.begin(), v.end());
      for (std::size_t i = 1; i < v.size(); ++i) ok = ok && v[i] - v[i - 1] > 1e-3;
    }
    if (ok) return x;
  }
}

struct Result {
  double input_err = 0.0;
  double param_err = 0.0;
  Index checked = 0;
};

/// Loss = sum(w * layer(x)) with fixed random w.
inline Result check(const Instance& in, std::mt19937_64& rng, double step = 1e-5) {
  auto layer = afloc::nn::make_layer<double>(in.spec);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto* p : layer->params())
    for (Index i = 0; i < p->value.size(); ++i) p->value[i] = g(rng) * 0.5 + (p->name == "gamma" ? 1.0 : 0.0);
  Tensor<double> x = safe_input(in, rng);
  Tensor<double> y = layer->forward(x, Mode::Train);
  Tensor<double> w(y.shape());
  for (Index i = 0; i < w.size(); ++i) w[i] = g(rng);
  const auto loss = [&](const Tensor<double>& xx) { return layer->forward(xx, Mode::Train).data().dot(w.data()); };

  for (auto* p : layer->params()) p->grad.data().setZero();
  layer->forward(x, Mode::Train);
  const Tensor<double> dx = layer->backward(w);
  std::vector<Tensor<double>> dparams;
  for (auto* p : layer->params()) dparams.push_back(p->grad);

  Result r;
  for (Index i = 0; i < x.size(); ++i) {
    Tensor<double> xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    const double num = (loss(xp) - loss(xm)) / (2 * step);
    r.input_err = std::max(r.input_err, rel_err(dx[i], num));
    ++r.checked;
  }
  const auto params = layer->params();
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& v = params[pi]->value;
    for (Index i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + step;
      const double lp = loss(x);
      v[i] = keep - step;
      const double lm = loss(x);
      v[i] = keep;
      r.param_err = std::max(r.param_err, rel_err(dparams[pi][i], (lp - lm) / (2 * step)));
      ++r.checked;
    }
  }
  return r;
}

inline constexpr LayerKind kAllKinds[] = {LayerKind::Conv2d,    LayerKind::Conv2dTranspose, LayerKind::FullyConnected,
                                          LayerKind::BatchNorm, LayerKind::Relu,            LayerKind::LeakyRelu,
                                          LayerKind::Tanh,      LayerKind::MaxPool2d};

/// <conv(x), y> versus <x, conv_transpose(y)> with shared weights; relative gap.
inline double adjoint_gap(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> ch(1, 4), k(1, 4), s(1, 3), hw(4, 9);
  const Index cin = ch(rng), cout = ch(rng), kk = k(rng), st = s(rng);
  const Index pad = std::uniform_int_distribution<Index>(0, kk - 1)(rng);
  // Height chosen so the transpose maps back to exactly the same size.
  Index h = hw(rng);
  while ((h + 2 * pad - kk) < 0 || (h + 2 * pad - kk) % st != 0) ++h;
  Index w = hw(rng);
  while ((w + 2 * pad - kk) < 0 || (w + 2 * pad - kk) % st != 0) ++w;
  auto conv = afloc::nn::make_layer<double>(LayerSpec::conv2d(cin, cout, kk, st, pad));
  auto tconv = afloc::nn::make_layer<double>(LayerSpec::conv2d_transpose(cout, cin, kk, st, pad));
  std::normal_distribution<double> g(0.0, 1.0);
  auto& cw = conv->params()[0]->value;
  for (Index i = 0; i < cw.size(); ++i) cw[i] = g(rng);
  tconv->params()[0]->value.data() = cw.data();
  const Index n = 2;
  Tensor<double> x({n, cin, h, w});
  for (Index i = 0; i < x.size(); ++i) x[i] = g(rng);
  const Tensor<double> ax = conv->forward(x, Mode::Inference);
  Tensor<double> y(ax.shape());
  for (Index i = 0; i < y.size(); ++i) y[i] = g(rng);
  const Tensor<double> aty = tconv->forward(y, Mode::Inference);
  if (aty.shape() != x.shape()) return 1.0;
  const double lhs = ax.data().dot(y.data());
  const double rhs = x.data().dot(aty.data());
  return std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs));
}

}  // namespace gradcheck
