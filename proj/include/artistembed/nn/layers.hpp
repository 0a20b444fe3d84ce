#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "artistembed/nn/tensor.hpp"

namespace artistembed::nn {

/// Temporal convolution over a [channels x frames] sequence, stride 1, zero
/// "same" padding (ceil((k-1)/2) frames on the left, floor((k-1)/2) on the
/// right). Cross-correlation convention: no kernel flip, so
///   y[o, t] = b[o] + sum_{j, c} W[o, j * in + c] * x[c, t + j - pad_left].
template <class T>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(Eigen::Index in_channels, Eigen::Index out_channels, Eigen::Index kernel)
      : weight(Matrix<T>::Zero(out_channels, in_channels * kernel)),
        bias(Matrix<T>::Zero(out_channels, 1)),
        in_(in_channels),
        out_(out_channels),
        kernel_(kernel) {
    if (kernel < 1 || in_channels < 1 || out_channels < 1) throw Error("bad architecture", "conv1d");
  }

  Eigen::Index in_channels() const { return in_; }
  Eigen::Index out_channels() const { return out_; }
  Eigen::Index kernel() const { return kernel_; }
  Eigen::Index pad_left() const { return kernel_ / 2; }

  Tensor<T> forward(const Tensor<T>& x) {
    require_shape(x.channels() == in_, "conv1d expects " + std::to_string(in_) + " input channels, got " +
                                           std::to_string(x.channels()));
    batch_ = x.batch;
    frames_ = x.frames;
    im2col(x);
    Tensor<T> y{Matrix<T>(out_, x.values.cols()), x.batch, x.frames};
    y.values.noalias() = weight.value * cols_;
    y.values.colwise() += bias.value.col(0);
    return y;
  }

  /// Accumulates weight/bias gradients and returns d(loss)/d(input).
  Tensor<T> backward(const Tensor<T>& dy) {
    require_shape(dy.channels() == out_ && dy.values.cols() == cols_.cols(), "conv1d backward");
    weight.grad.noalias() += dy.values * cols_.transpose();
    bias.grad += dy.values.rowwise().sum();
    const Matrix<T> dcols = weight.value.transpose() * dy.values;
    Tensor<T> dx = Tensor<T>::zeros(in_, batch_, frames_);
    for_each_tap([&](Eigen::Index row, Eigen::Index dst, Eigen::Index src, Eigen::Index len) {
      dx.values.middleCols(src, len) += dcols.block(row, dst, in_, len);
    });
    return dx;
  }

  Param<T> weight;
  Param<T> bias;

 private:
  // Calls fn(row offset in the column matrix, destination column, source
  // column, run length) for every in-range run of each tap of each sample.
  template <class Fn>
  void for_each_tap(Fn&& fn) const {
    const Eigen::Index pad = pad_left();
    for (Eigen::Index b = 0; b < batch_; ++b) {
      const Eigen::Index base = b * frames_;
      for (Eigen::Index j = 0; j < kernel_; ++j) {
        const Eigen::Index shift = j - pad;
        const Eigen::Index t0 = std::max<Eigen::Index>(0, -shift);
        const Eigen::Index t1 = std::min<Eigen::Index>(frames_, frames_ - shift);
        if (t1 > t0) fn(j * in_, base + t0, base + t0 + shift, t1 - t0);
      }
    }
  }

  void im2col(const Tensor<T>& x) {
    cols_.setZero(in_ * kernel_, x.values.cols());
    for_each_tap([&](Eigen::Index row, Eigen::Index dst, Eigen::Index src, Eigen::Index len) {
      cols_.block(row, dst, in_, len) = x.values.middleCols(src, len);
    });
  }

  Eigen::Index in_ = 0, out_ = 0, kernel_ = 1;
  Eigen::Index batch_ = 0, frames_ = 0;
  Matrix<T> cols_;
};

/// Per-channel batch normalisation over (batch x time).
template <class T>
class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  explicit BatchNorm1d(Eigen::Index channels, double eps = 1e-5, double momentum = 0.99)
      : gamma(Matrix<T>::Ones(channels, 1)),
        beta(Matrix<T>::Zero(channels, 1)),
        running_mean(Vector<T>::Zero(channels)),
        running_var(Vector<T>::Ones(channels)),
        eps_(eps),
        momentum_(momentum) {}

  Eigen::Index channels() const { return gamma.value.rows(); }
  double eps() const { return eps_; }
  double momentum() const { return momentum_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    require_shape(x.channels() == channels(), "batchnorm1d channel count");
    mode_ = mode;
    Tensor<T> y{Matrix<T>(x.values.rows(), x.values.cols()), x.batch, x.frames};
    if (mode == Mode::infer) {
      inv_std_ = (running_var.array() + T(eps_)).rsqrt().matrix();
      const Vector<T> scale = gamma.value.col(0).cwiseProduct(inv_std_);
      const Vector<T> shift = beta.value.col(0) - running_mean.cwiseProduct(scale);
      y.values = (x.values.array().colwise() * scale.array()).colwise() + shift.array();
      return y;
    }
    if (x.batch < 2) throw Error("batch too small");
    const auto n = static_cast<T>(x.values.cols());
    const Vector<T> mean = x.values.rowwise().mean();
    xhat_ = x.values.colwise() - mean;
    const Vector<T> var = xhat_.array().square().rowwise().sum().matrix() / n;
    inv_std_ = (var.array() + T(eps_)).rsqrt().matrix();
    xhat_.array().colwise() *= inv_std_.array();
    y.values = (xhat_.array().colwise() * gamma.value.col(0).array()).colwise() + beta.value.col(0).array();

    // Running variance uses the unbiased batch estimate.
    const T m = T(momentum_);
    running_mean = m * running_mean + (T(1) - m) * mean;
    running_var = m * running_var + (T(1) - m) * var * (n / std::max(n - T(1), T(1)));
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx{Matrix<T>(dy.values.rows(), dy.values.cols()), dy.batch, dy.frames};
    if (mode_ == Mode::infer) {
      const Vector<T> scale = gamma.value.col(0).cwiseProduct(inv_std_);
      dx.values = dy.values.array().colwise() * scale.array();
      return dx;
    }
    require_shape(dy.values.cols() == xhat_.cols(), "batchnorm1d backward");
    const auto n = static_cast<T>(dy.values.cols());
    const Vector<T> dbeta = dy.values.rowwise().sum();
    const Vector<T> dgamma = dy.values.cwiseProduct(xhat_).rowwise().sum();
    gamma.grad.col(0) += dgamma;
    beta.grad.col(0) += dbeta;
    const Vector<T> scale = gamma.value.col(0).cwiseProduct(inv_std_) / n;
    dx.values = ((dy.values.array() * n).colwise() - dbeta.array()) -
                (xhat_.array().colwise() * dgamma.array());
    dx.values.array().colwise() *= scale.array();
    return dx;
  }

  Param<T> gamma;
  Param<T> beta;
  Vector<T> running_mean;
  Vector<T> running_var;

 private:
  double eps_ = 1e-5;
  double momentum_ = 0.99;
  Mode mode_ = Mode::infer;
  Matrix<T> xhat_;
  Vector<T> inv_std_;
};

template <class T>
class Relu {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    mask_ = (x.values.array() > T(0)).template cast<T>();
    Tensor<T> y = x;
    y.values = x.values.cwiseMax(T(0));
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx = dy;
    dx.values.array() *= mask_.array();
    return dx;
  }

 private:
  Matrix<T> mask_;
};

/// Non-overlapping temporal max pooling. Trailing frames that do not fill a
/// whole window are dropped; ties resolve to the earliest frame.
template <class T>
class MaxPool1d {
 public:
  MaxPool1d() = default;
  explicit MaxPool1d(Eigen::Index width) : width_(width) {
    if (width < 1) throw Error("invalid pool");
  }

  Eigen::Index width() const { return width_; }

  Tensor<T> forward(const Tensor<T>& x) {
    const Eigen::Index out_frames = x.frames / width_;
    require_shape(out_frames >= 1, "maxpool1d needs at least " + std::to_string(width_) + " frames");
    in_batch_ = x.batch;
    in_frames_ = x.frames;
    Tensor<T> y{Matrix<T>(x.channels(), x.batch * out_frames), x.batch, out_frames};
    argmax_.resize(x.channels(), y.values.cols());
    for (Eigen::Index b = 0; b < x.batch; ++b) {
      for (Eigen::Index o = 0; o < out_frames; ++o) {
        const Eigen::Index dst = b * out_frames + o;
        const Eigen::Index first = b * x.frames + o * width_;
        auto best = y.values.col(dst);
        auto arg = argmax_.col(dst);
        best = x.values.col(first);
        arg.setConstant(first);
        for (Eigen::Index w = 1; w < width_; ++w) {
          const auto col = x.values.col(first + w);
          for (Eigen::Index c = 0; c < x.channels(); ++c) {
            if (col(c) > best(c)) {
              best(c) = col(c);
              arg(c) = first + w;
            }
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx = Tensor<T>::zeros(dy.channels(), in_batch_, in_frames_);
    for (Eigen::Index o = 0; o < dy.values.cols(); ++o) {
      for (Eigen::Index c = 0; c < dy.channels(); ++c) dx.values(c, argmax_(c, o)) += dy.values(c, o);
    }
    return dx;
  }

 private:
  Eigen::Index width_ = 1;
  Eigen::Index in_batch_ = 0, in_frames_ = 0;
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> argmax_;
};

/// Affine map on column vectors: y = W x + b, x is features x batch.
template <class T>
class Dense {
 public:
  Dense() = default;
  Dense(Eigen::Index in, Eigen::Index out)
      : weight(Matrix<T>::Zero(out, in)), bias(Matrix<T>::Zero(out, 1)) {}

  Eigen::Index in_features() const { return weight.value.cols(); }
  Eigen::Index out_features() const { return weight.value.rows(); }

  Matrix<T> forward(const Matrix<T>& x) {
    require_shape(x.rows() == in_features(), "dense expects " + std::to_string(in_features()) +
                                                 " inputs, got " + std::to_string(x.rows()));
    x_ = x;
    Matrix<T> y = weight.value * x;
    y.colwise() += bias.value.col(0);
    return y;
  }

  Matrix<T> backward(const Matrix<T>& dy) {
    weight.grad.noalias() += dy * x_.transpose();
    bias.grad += dy.rowwise().sum();
    return weight.value.transpose() * dy;
  }

  Param<T> weight;
  Param<T> bias;

 private:
  Matrix<T> x_;
};

/// Inverted dropout: survivors are scaled by 1 / (1 - p) in training mode,
/// identity at inference.
template <class T>
class Dropout {
 public:
  explicit Dropout(double p = 0.5) : p_(p) {
    if (!(p >= 0.0 && p < 1.0)) throw Error("invalid dropout rate");
  }

  double rate() const { return p_; }

  Matrix<T> forward(const Matrix<T>& x, Mode mode, Rng& rng) {
    if (mode == Mode::infer || p_ == 0.0) {
      mask_.resize(0, 0);
      return x;
    }
    std::bernoulli_distribution keep(1.0 - p_);
    const T scale = T(1.0 / (1.0 - p_));
    mask_.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask_.size(); ++i) mask_.data()[i] = keep(rng) ? scale : T(0);
    return x.cwiseProduct(mask_);
  }

  /// Applies a caller-supplied mask (already scaled); used for gradient checks.
  Matrix<T> forward_with_mask(const Matrix<T>& x, const Matrix<T>& mask) {
    require_shape(mask.rows() == x.rows() && mask.cols() == x.cols(), "dropout mask");
    mask_ = mask;
    return x.cwiseProduct(mask_);
  }

  Matrix<T> backward(const Matrix<T>& dy) const {
    if (mask_.size() == 0) return dy;
    return dy.cwiseProduct(mask_);
  }

  const Matrix<T>& mask() const { return mask_; }

 private:
  double p_;
  Matrix<T> mask_;
};

}  // namespace artistembed::nn
