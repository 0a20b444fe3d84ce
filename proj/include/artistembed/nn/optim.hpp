#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "artistembed/nn/tensor.hpp"

namespace artistembed::nn {

template <class T>
struct OptState {
  std::vector<Matrix<T>> velocity;
  std::uint64_t step_count = 0;
  double base_lr = 0.0;
  double current_lr = 0.0;

  static OptState initial(double lr) { return {{}, 0, lr, lr}; }
};

/// SGD with Nesterov momentum and time-based decay applied per update:
///   lr_t = current_lr / (1 + decay * step_count)
///   v <- mu * v - lr_t * g
///   p <- p + mu * v - lr_t * g
template <class T>
struct NesterovSgd {
  double momentum = 0.9;
  double decay = 1e-6;

  double effective_lr(const OptState<T>& state) const {
    return state.current_lr / (1.0 + decay * static_cast<double>(state.step_count));
  }

  void step(std::span<Param<T>* const> params, OptState<T>& state) const {
    if (state.velocity.empty()) {
      for (const auto* p : params) state.velocity.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    }
    require_shape(state.velocity.size() == params.size(), "optimizer parameter count");
    const T lr = static_cast<T>(effective_lr(state));
    const T mu = static_cast<T>(momentum);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      auto& v = state.velocity[i];
      require_shape(p.grad.rows() == p.value.rows() && p.grad.cols() == p.value.cols() &&
                        v.rows() == p.value.rows() && v.cols() == p.value.cols(),
                    "optimizer parameter " + std::to_string(i));
      v = mu * v - lr * p.grad;
      p.value += mu * v - lr * p.grad;
    }
    ++state.step_count;
  }
};

}  // namespace artistembed::nn
