#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "afloc/nn/tensor.hpp"

namespace afloc::nn {

enum class LayerKind {
  Conv2d,
  Conv2dTranspose,
  FullyConnected,
  BatchNorm,
  Relu,
  LeakyRelu,
  Tanh,
  MaxPool2d,
};

std::string_view layer_kind_name(LayerKind kind);

enum class Mode { Train, Inference };

/// Layer description. Channel/kernel fields apply to the convolution kinds,
/// `in_features`/`out_shape` to fully-connected, `channels` to batch-norm.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 1;
  Index stride = 1;
  Index padding = 0;
  Index in_features = 0;
  Shape out_shape;  // per-sample output shape of a fully-connected layer
  Index channels = 0;
  bool bias = true;  // conv / fully-connected: learn an additive bias
  double slope = 0.2;
  double momentum = 0.99;
  double epsilon = 1e-5;

  static LayerSpec conv2d(Index in_c, Index out_c, Index kernel, Index stride, Index padding) {
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.in_channels = in_c;
    s.out_channels = out_c;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
  }
  static LayerSpec conv2d_transpose(Index in_c, Index out_c, Index kernel, Index stride, Index padding) {
    LayerSpec s = conv2d(in_c, out_c, kernel, stride, padding);
    s.kind = LayerKind::Conv2dTranspose;
    return s;
  }
  static LayerSpec fully_connected(Index in_features, Shape out_shape, bool with_bias = true) {
    LayerSpec s;
    s.kind = LayerKind::FullyConnected;
    s.in_features = in_features;
    s.out_shape = std::move(out_shape);
    s.bias = with_bias;
    return s;
  }
  static LayerSpec batch_norm(Index channels) {
    LayerSpec s;
    s.kind = LayerKind::BatchNorm;
    s.channels = channels;
    return s;
  }
  static LayerSpec relu() { return LayerSpec{}; }
  static LayerSpec leaky_relu(double slope) {
    LayerSpec s;
    s.kind = LayerKind::LeakyRelu;
    s.slope = slope;
    return s;
  }
  static LayerSpec tanh() {
    LayerSpec s;
    s.kind = LayerKind::Tanh;
    return s;
  }
  static LayerSpec max_pool2d(Index size) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool2d;
    s.kernel = size;
    s.stride = size;
    return s;
  }

  void validate() const {
    switch (kind) {
      case LayerKind::Conv2d:
      case LayerKind::Conv2dTranspose:
        if (in_channels < 1 || out_channels < 1 || kernel < 1 || stride < 1 || padding < 0)
          fail(ErrorCode::InvalidArgument, "invalid convolution hyperparameters");
        break;
      case LayerKind::FullyConnected:
        if (in_features < 1 || out_shape.empty() || shape_size(out_shape) < 1)
          fail(ErrorCode::InvalidArgument, "invalid fully-connected shape");
        break;
      case LayerKind::BatchNorm:
        if (channels < 1 || !(momentum > 0 && momentum < 1) || !(epsilon > 0))
          fail(ErrorCode::InvalidArgument, "invalid batch-norm settings");
        break;
      case LayerKind::LeakyRelu:
        if (!(slope > 0 && slope < 1)) fail(ErrorCode::InvalidArgument, "leaky slope must lie in (0,1)");
        break;
      case LayerKind::MaxPool2d:
        if (kernel < 1 || stride < 1) fail(ErrorCode::InvalidArgument, "invalid pooling size");
        break;
      case LayerKind::Relu:
      case LayerKind::Tanh:
        break;
    }
  }
};

template <typename Scalar>
struct Param {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;

  Param(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}
};

template <typename Scalar>
class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(std::move(spec)) { spec_.validate(); }
  virtual ~Layer() = default;

  const LayerSpec& spec() const { return spec_; }

  virtual Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) = 0;
  /// Accumulates parameter gradients and returns the input gradient.
  virtual Tensor<Scalar> backward(const Tensor<Scalar>& dy) = 0;
  virtual std::vector<Param<Scalar>*> params() { return {}; }
  /// Non-trainable state saved with checkpoints.
  virtual std::vector<std::pair<std::string, Tensor<Scalar>*>> buffers() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;

 protected:
  LayerSpec spec_;
};

// ---------------------------------------------------------------------------
// im2col / col2im for one sample. `cols` is (channels * k * k, out_h * out_w)
// row-major; out-of-image taps read zero and are dropped on scatter.

struct ConvGeometry {
  Index channels, height, width, kernel, stride, padding;
  Index out_h() const { return (height + 2 * padding - kernel) / stride + 1; }
  Index out_w() const { return (width + 2 * padding - kernel) / stride + 1; }
};

template <typename Scalar>
void im2col(const Scalar* img, const ConvGeometry& g,
            Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& cols) {
  const Index oh = g.out_h(), ow = g.out_w();
  cols.resize(g.channels * g.kernel * g.kernel, oh * ow);
  Index row = 0;
  for (Index c = 0; c < g.channels; ++c) {
    const Scalar* plane = img + c * g.height * g.width;
    for (Index ki = 0; ki < g.kernel; ++ki)
      for (Index kj = 0; kj < g.kernel; ++kj, ++row) {
        Scalar* dst = cols.data() + row * oh * ow;
        for (Index y = 0; y < oh; ++y) {
          const Index iy = y * g.stride - g.padding + ki;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst + y * ow, dst + (y + 1) * ow, Scalar(0));
            continue;
          }
          for (Index x = 0; x < ow; ++x) {
            const Index ix = x * g.stride - g.padding + kj;
            dst[y * ow + x] = (ix >= 0 && ix < g.width) ? plane[iy * g.width + ix] : Scalar(0);
          }
        }
      }
  }
}

template <typename Scalar>
void col2im(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& cols,
            const ConvGeometry& g, Scalar* img) {
  const Index oh = g.out_h(), ow = g.out_w();
  Index row = 0;
  for (Index c = 0; c < g.channels; ++c) {
    Scalar* plane = img + c * g.height * g.width;
    for (Index ki = 0; ki < g.kernel; ++ki)
      for (Index kj = 0; kj < g.kernel; ++kj, ++row) {
        const Scalar* src = cols.data() + row * oh * ow;
        for (Index y = 0; y < oh; ++y) {
          const Index iy = y * g.stride - g.padding + ki;
          if (iy < 0 || iy >= g.height) continue;
          for (Index x = 0; x < ow; ++x) {
            const Index ix = x * g.stride - g.padding + kj;
            if (ix >= 0 && ix < g.width) plane[iy * g.width + ix] += src[y * ow + x];
          }
        }
      }
  }
}

namespace detail {

inline void expect_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank)
    fail(ErrorCode::ShapeMismatch, std::string(what) + " expects rank " + std::to_string(rank) +
                                       " input, got " + shape_string(s));
}

template <typename Scalar>
void require_cache(const Tensor<Scalar>& cached, const char* what) {
  if (cached.size() == 0 && cached.shape().empty())
    fail(ErrorCode::NoRecordedForward, std::string(what) + ": backward without a recorded forward");
}

}  // namespace detail

// ---------------------------------------------------------------------------

template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
 public:
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;

  explicit Conv2d(LayerSpec spec)
      : Layer<Scalar>(std::move(spec)),
        weight_("weight", {this->spec_.out_channels, this->spec_.in_channels * this->spec_.kernel * this->spec_.kernel}),
        bias_("bias", {this->spec_.out_channels}) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    const auto& s = this->spec_;
    detail::expect_rank(x.shape(), 4, "conv2d");
    if (x.dim(1) != s.in_channels)
      fail(ErrorCode::ShapeMismatch, "conv2d expects " + std::to_string(s.in_channels) + " channels, got " +
                                         shape_string(x.shape()));
    geom_ = {s.in_channels, x.dim(2), x.dim(3), s.kernel, s.stride, s.padding};
    if (geom_.out_h() < 1 || geom_.out_w() < 1) fail(ErrorCode::ShapeMismatch, "conv2d kernel larger than input");
    input_ = x;
    const Index oh = geom_.out_h(), ow = geom_.out_w();
    Tensor<Scalar> y({x.dim(0), s.out_channels, oh, ow});
    const auto w = weight_.value.as_matrix();
    RowMatrix cols;
    for (Index n = 0; n < x.dim(0); ++n) {
      im2col(x.ptr() + n * x.per_sample(), geom_, cols);
      auto out = y.sample(n, s.out_channels, oh * ow);
      out.noalias() = w * cols;
      out.colwise() += bias_.value.data();
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    detail::require_cache(input_, "conv2d");
    const auto& s = this->spec_;
    const Index p = geom_.out_h() * geom_.out_w();
    if (dy.size() != input_.dim(0) * s.out_channels * p)
      fail(ErrorCode::ShapeMismatch, "conv2d gradient shape mismatch");
    Tensor<Scalar> dx(input_.shape());
    const auto w = weight_.value.as_matrix();
    auto dw = weight_.grad.as_matrix();
    RowMatrix cols, dcols;
    for (Index n = 0; n < input_.dim(0); ++n) {
      const auto g = dy.sample(n, s.out_channels, p);
      im2col(input_.ptr() + n * input_.per_sample(), geom_, cols);
      dw.noalias() += g * cols.transpose();
      bias_.grad.data() += g.rowwise().sum();
      dcols.noalias() = w.transpose() * g;
      col2im(dcols, geom_, dx.ptr() + n * dx.per_sample());
    }
    input_ = {};
    return dx;
  }

  std::vector<Param<Scalar>*> params() override {
    if (!this->spec_.bias) return {&weight_};
    return {&weight_, &bias_};
  }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Conv2d>(*this); }

 private:
  Param<Scalar> weight_;
  Param<Scalar> bias_;
  ConvGeometry geom_{};
  Tensor<Scalar> input_;
};

/// Adjoint of Conv2d: output size stride * (in - 1) + kernel - 2 * padding.
template <typename Scalar>
class Conv2dTranspose final : public Layer<Scalar> {
 public:
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;

  explicit Conv2dTranspose(LayerSpec spec)
      : Layer<Scalar>(std::move(spec)),
        weight_("weight", {this->spec_.in_channels, this->spec_.out_channels * this->spec_.kernel * this->spec_.kernel}),
        bias_("bias", {this->spec_.out_channels}) {}

  static Index output_size(Index in, Index kernel, Index stride, Index padding) {
    return stride * (in - 1) + kernel - 2 * padding;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    const auto& s = this->spec_;
    detail::expect_rank(x.shape(), 4, "conv2d_transpose");
    if (x.dim(1) != s.in_channels)
      fail(ErrorCode::ShapeMismatch, "conv2d_transpose expects " + std::to_string(s.in_channels) +
                                         " channels, got " + shape_string(x.shape()));
    const Index oh = output_size(x.dim(2), s.kernel, s.stride, s.padding);
    const Index ow = output_size(x.dim(3), s.kernel, s.stride, s.padding);
    if (oh < 1 || ow < 1) fail(ErrorCode::ShapeMismatch, "conv2d_transpose output is empty");
    geom_ = {s.out_channels, oh, ow, s.kernel, s.stride, s.padding};
    input_ = x;
    const Index p = x.dim(2) * x.dim(3);
    Tensor<Scalar> y({x.dim(0), s.out_channels, oh, ow});
    const auto w = weight_.value.as_matrix();
    RowMatrix cols;
    for (Index n = 0; n < x.dim(0); ++n) {
      cols.noalias() = w.transpose() * x.sample(n, s.in_channels, p);
      Scalar* out = y.ptr() + n * y.per_sample();
      col2im(cols, geom_, out);
      auto plane = y.sample(n, s.out_channels, oh * ow);
      plane.colwise() += bias_.value.data();
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    detail::require_cache(input_, "conv2d_transpose");
    const auto& s = this->spec_;
    const Index p = input_.dim(2) * input_.dim(3);
    const Index out_plane = geom_.height * geom_.width;
    if (dy.size() != input_.dim(0) * s.out_channels * out_plane)
      fail(ErrorCode::ShapeMismatch, "conv2d_transpose gradient shape mismatch");
    Tensor<Scalar> dx(input_.shape());
    const auto w = weight_.value.as_matrix();
    auto dw = weight_.grad.as_matrix();
    RowMatrix dcols;
    for (Index n = 0; n < input_.dim(0); ++n) {
      im2col(dy.ptr() + n * dy.per_sample(), geom_, dcols);
      const auto xn = input_.sample(n, s.in_channels, p);
      dw.noalias() += xn * dcols.transpose();
      dx.sample(n, s.in_channels, p).noalias() = w * dcols;
      bias_.grad.data() += dy.sample(n, s.out_channels, out_plane).rowwise().sum();
    }
    input_ = {};
    return dx;
  }

  std::vector<Param<Scalar>*> params() override {
    if (!this->spec_.bias) return {&weight_};
    return {&weight_, &bias_};
  }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Conv2dTranspose>(*this); }

 private:
  Param<Scalar> weight_;
  Param<Scalar> bias_;
  ConvGeometry geom_{};
  Tensor<Scalar> input_;
};

/// Flattens each sample, then y = W x + b reshaped to `out_shape`.
template <typename Scalar>
class FullyConnected final : public Layer<Scalar> {
 public:
  explicit FullyConnected(LayerSpec spec)
      : Layer<Scalar>(std::move(spec)),
        weight_("weight", {shape_size(this->spec_.out_shape), this->spec_.in_features}),
        bias_("bias", {shape_size(this->spec_.out_shape)}) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    if (x.rank() < 2 || x.per_sample() != this->spec_.in_features)
      fail(ErrorCode::ShapeMismatch, "fully_connected expects " + std::to_string(this->spec_.in_features) +
                                         " features per sample, got " + shape_string(x.shape()));
    input_ = x;
    Shape out{x.dim(0)};
    out.insert(out.end(), this->spec_.out_shape.begin(), this->spec_.out_shape.end());
    Tensor<Scalar> y(out);
    auto ym = y.as_matrix();
    ym.noalias() = x.as_matrix() * weight_.value.as_matrix().transpose();
    ym.rowwise() += bias_.value.data().transpose();
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    detail::require_cache(input_, "fully_connected");
    if (dy.size() != input_.dim(0) * weight_.value.dim(0))
      fail(ErrorCode::ShapeMismatch, "fully_connected gradient shape mismatch");
    const auto g = dy.as_matrix();
    weight_.grad.as_matrix().noalias() += g.transpose() * input_.as_matrix();
    bias_.grad.data() += g.colwise().sum().transpose();
    Tensor<Scalar> dx(input_.shape());
    dx.as_matrix().noalias() = g * weight_.value.as_matrix();
    input_ = {};
    return dx;
  }

  std::vector<Param<Scalar>*> params() override {
    if (!this->spec_.bias) return {&weight_};
    return {&weight_, &bias_};
  }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<FullyConnected>(*this); }

 private:
  Param<Scalar> weight_;
  Param<Scalar> bias_;
  Tensor<Scalar> input_;
};

/// Per-channel normalisation over batch and spatial positions. Train mode
/// uses batch statistics and updates running statistics with `momentum`;
/// inference mode uses the running statistics.
template <typename Scalar>
class BatchNorm final : public Layer<Scalar> {
 public:
  explicit BatchNorm(LayerSpec spec)
      : Layer<Scalar>(std::move(spec)),
        gamma_("gamma", {this->spec_.channels}),
        beta_("beta", {this->spec_.channels}),
        running_mean_(Shape{this->spec_.channels}),
        running_var_(Tensor<Scalar>::constant({this->spec_.channels}, Scalar(1))) {
    gamma_.value.data().setOnes();
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    const Index c = this->spec_.channels;
    if (x.rank() < 2 || x.dim(1) != c)
      fail(ErrorCode::ShapeMismatch, "batch_norm expects " + std::to_string(c) + " channels, got " +
                                         shape_string(x.shape()));
    const Index n = x.dim(0);
    const Index plane = x.per_sample() / c;
    const Index count = n * plane;
    mode_ = mode;
    xhat_ = Tensor<Scalar>(x.shape());
    inv_std_.resize(c);
    Tensor<Scalar> y(x.shape());
    const Scalar eps = static_cast<Scalar>(this->spec_.epsilon);
    const Scalar mom = static_cast<Scalar>(this->spec_.momentum);
    for (Index ch = 0; ch < c; ++ch) {
      Scalar mean, var;
      if (mode == Mode::Train) {
        Scalar sum = 0;
        for (Index i = 0; i < n; ++i)
          sum += x.sample(i, c, plane).row(ch).sum();
        mean = sum / static_cast<Scalar>(count);
        Scalar sq = 0;
        for (Index i = 0; i < n; ++i)
          sq += (x.sample(i, c, plane).row(ch).array() - mean).square().sum();
        var = sq / static_cast<Scalar>(count);
        const Scalar unbiased = count > 1 ? sq / static_cast<Scalar>(count - 1) : var;
        running_mean_[ch] = mom * running_mean_[ch] + (Scalar(1) - mom) * mean;
        running_var_[ch] = mom * running_var_[ch] + (Scalar(1) - mom) * unbiased;
      } else {
        mean = running_mean_[ch];
        var = running_var_[ch];
      }
      inv_std_[ch] = Scalar(1) / std::sqrt(var + eps);
      for (Index i = 0; i < n; ++i) {
        auto xh = xhat_.sample(i, c, plane).row(ch);
        xh.array() = (x.sample(i, c, plane).row(ch).array() - mean) * inv_std_[ch];
        y.sample(i, c, plane).row(ch).array() = xh.array() * gamma_.value[ch] + beta_.value[ch];
      }
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    detail::require_cache(xhat_, "batch_norm");
    const Index c = this->spec_.channels;
    const Index n = xhat_.dim(0);
    const Index plane = xhat_.per_sample() / c;
    const auto count = static_cast<Scalar>(n * plane);
    if (dy.size() != xhat_.size()) fail(ErrorCode::ShapeMismatch, "batch_norm gradient shape mismatch");
    Tensor<Scalar> dx(xhat_.shape());
    for (Index ch = 0; ch < c; ++ch) {
      Scalar sum_dy = 0, sum_dy_xhat = 0;
      for (Index i = 0; i < n; ++i) {
        const auto g = dy.sample(i, c, plane).row(ch).array();
        sum_dy += g.sum();
        sum_dy_xhat += (g * xhat_.sample(i, c, plane).row(ch).array()).sum();
      }
      gamma_.grad[ch] += sum_dy_xhat;
      beta_.grad[ch] += sum_dy;
      const Scalar scale = gamma_.value[ch] * inv_std_[ch];
      for (Index i = 0; i < n; ++i) {
        const auto g = dy.sample(i, c, plane).row(ch).array();
        auto d = dx.sample(i, c, plane).row(ch);
        if (mode_ == Mode::Train)
          d.array() = scale * (g - sum_dy / count - xhat_.sample(i, c, plane).row(ch).array() * (sum_dy_xhat / count));
        else
          d.array() = scale * g;
      }
    }
    xhat_ = {};
    return dx;
  }

  std::vector<Param<Scalar>*> params() override { return {&gamma_, &beta_}; }
  std::vector<std::pair<std::string, Tensor<Scalar>*>> buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<BatchNorm>(*this); }

 private:
  Param<Scalar> gamma_;
  Param<Scalar> beta_;
  Tensor<Scalar> running_mean_;
  Tensor<Scalar> running_var_;
  Mode mode_ = Mode::Train;
  Tensor<Scalar> xhat_;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std_;
};

template <typename Scalar>
class Activation final : public Layer<Scalar> {
 public:
  using Layer<Scalar>::Layer;

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    Tensor<Scalar> y(x.shape());
    const auto xa = x.data().array();
    switch (this->spec_.kind) {
      case LayerKind::Relu: y.data() = xa.max(Scalar(0)).matrix(); break;
      case LayerKind::LeakyRelu: {
        const auto a = static_cast<Scalar>(this->spec_.slope);
        y.data() = (xa > Scalar(0)).select(xa, a * xa).matrix();
        break;
      }
      case LayerKind::Tanh: y.data() = xa.tanh().matrix(); break;
      default: fail(ErrorCode::InvalidArgument, "not an activation layer");
    }
    input_ = x;
    if (this->spec_.kind == LayerKind::Tanh) output_ = y;
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    detail::require_cache(input_, "activation");
    if (dy.size() != input_.size()) fail(ErrorCode::ShapeMismatch, "activation gradient shape mismatch");
    Tensor<Scalar> dx(input_.shape());
    const auto xa = input_.data().array();
    const auto g = dy.data().array();
    switch (this->spec_.kind) {
      case LayerKind::Relu: dx.data() = (xa > Scalar(0)).select(g, Scalar(0)).matrix(); break;
      case LayerKind::LeakyRelu: {
        const auto a = static_cast<Scalar>(this->spec_.slope);
        dx.data() = (xa > Scalar(0)).select(g, a * g).matrix();
        break;
      }
      case LayerKind::Tanh:
        dx.data() = (g * (Scalar(1) - output_.data().array().square())).matrix();
        break;
      default: break;
    }
    input_ = {};
    output_ = {};
    return dx;
  }

  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Activation>(*this); }

 private:
  Tensor<Scalar> input_;
  Tensor<Scalar> output_;
};

/// Non-overlapping max pooling; ties resolve to the first element in scan order.
template <typename Scalar>
class MaxPool2d final : public Layer<Scalar> {
 public:
  using Layer<Scalar>::Layer;

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    detail::expect_rank(x.shape(), 4, "max_pool2d");
    const Index k = this->spec_.kernel, st = this->spec_.stride;
    const Index c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const Index oh = (h - k) / st + 1, ow = (w - k) / st + 1;
    if (h < k || w < k) fail(ErrorCode::ShapeMismatch, "max_pool2d window larger than input");
    in_shape_ = x.shape();
    Tensor<Scalar> y({x.dim(0), c, oh, ow});
    argmax_.assign(static_cast<std::size_t>(y.size()), 0);
    Index o = 0;
    for (Index n = 0; n < x.dim(0); ++n)
      for (Index ch = 0; ch < c; ++ch) {
        const Index base = (n * c + ch) * h * w;
        for (Index i = 0; i < oh; ++i)
          for (Index j = 0; j < ow; ++j, ++o) {
            Index best = base + (i * st) * w + j * st;
            for (Index di = 0; di < k; ++di)
              for (Index dj = 0; dj < k; ++dj) {
                const Index idx = base + (i * st + di) * w + (j * st + dj);
                if (x[idx] > x[best]) best = idx;
              }
            argmax_[o] = best;
            y[o] = x[best];
          }
      }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    if (in_shape_.empty()) fail(ErrorCode::NoRecordedForward, "max_pool2d: backward without a recorded forward");
    if (static_cast<std::size_t>(dy.size()) != argmax_.size())
      fail(ErrorCode::ShapeMismatch, "max_pool2d gradient shape mismatch");
    Tensor<Scalar> dx(in_shape_);
    for (std::size_t o = 0; o < argmax_.size(); ++o) dx[argmax_[o]] += dy[static_cast<Index>(o)];
    in_shape_.clear();
    return dx;
  }

  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<MaxPool2d>(*this); }

 private:
  Shape in_shape_;
  std::vector<Index> argmax_;
};

template <typename Scalar>
std::unique_ptr<Layer<Scalar>> make_layer(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::Conv2d: return std::make_unique<Conv2d<Scalar>>(spec);
    case LayerKind::Conv2dTranspose: return std::make_unique<Conv2dTranspose<Scalar>>(spec);
    case LayerKind::FullyConnected: return std::make_unique<FullyConnected<Scalar>>(spec);
    case LayerKind::BatchNorm: return std::make_unique<BatchNorm<Scalar>>(spec);
    case LayerKind::MaxPool2d: return std::make_unique<MaxPool2d<Scalar>>(spec);
    case LayerKind::Relu:
    case LayerKind::LeakyRelu:
    case LayerKind::Tanh: return std::make_unique<Activation<Scalar>>(spec);
  }
  fail(ErrorCode::InvalidArgument, "unknown layer kind");
}

inline std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Conv2dTranspose: return "conv2d_transpose";
    case LayerKind::FullyConnected: return "fully_connected";
    case LayerKind::BatchNorm: return "batch_norm";
    case LayerKind::Relu: return "relu";
    case LayerKind::LeakyRelu: return "leaky_relu";
    case LayerKind::Tanh: return "tanh";
    case LayerKind::MaxPool2d: return "max_pool2d";
  }
  return "unknown";
}

}  // namespace afloc::nn
