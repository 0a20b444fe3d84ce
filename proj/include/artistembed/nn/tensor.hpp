#pragma once

#include <random>
#include <string>

#include <Eigen/Dense>

#include "artistembed/error.hpp"

namespace artistembed::nn {

enum class Mode { train, infer };

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// All stochastic layers draw from an explicitly passed generator.
using Rng = std::mt19937_64;

/// A batch of multichannel sequences stored channels x (batch * frames).
/// Sample b occupies columns [b * frames, (b + 1) * frames).
template <class T>
struct Tensor {
  Matrix<T> values;
  Eigen::Index batch = 0;
  Eigen::Index frames = 0;

  Eigen::Index channels() const { return values.rows(); }

  static Tensor zeros(Eigen::Index channels, Eigen::Index batch, Eigen::Index frames) {
    return {Matrix<T>::Zero(channels, batch * frames), batch, frames};
  }

  auto sample(Eigen::Index b) { return values.middleCols(b * frames, frames); }
  auto sample(Eigen::Index b) const { return values.middleCols(b * frames, frames); }
};

/// A learnable parameter and its accumulated gradient.
template <class T>
struct Param {
  Matrix<T> value;
  Matrix<T> grad;

  Param() = default;
  explicit Param(Matrix<T> v) : value(std::move(v)), grad(Matrix<T>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

inline void require_shape(bool ok, const std::string& context) {
  if (!ok) throw Error("shape error", context);
}

}  // namespace artistembed::nn
