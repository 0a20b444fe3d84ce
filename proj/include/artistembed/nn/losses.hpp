#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "artistembed/nn/tensor.hpp"

namespace artistembed::nn {

template <class T>
struct ScalarGrad {
  T loss{};
  Vector<T> grad;
};

/// -log softmax(logits)[target] with max-subtraction; gradient softmax - onehot.
template <class T>
ScalarGrad<T> softmax_cross_entropy(const Eigen::Ref<const Vector<T>>& logits, Eigen::Index target) {
  if (target < 0 || target >= logits.size()) throw Error("bad label");
  const T peak = logits.maxCoeff();
  Vector<T> prob = (logits.array() - peak).exp().matrix();
  const T total = prob.sum();
  prob /= total;
  ScalarGrad<T> out;
  out.loss = -(logits(target) - peak - std::log(total));
  out.grad = prob;
  out.grad(target) -= T(1);
  return out;
}

template <class T>
struct BatchLoss {
  T loss{};
  Matrix<T> grad;  // d(mean loss)/d(logits), same shape as logits
  Vector<T> per_output;  // mean loss per output unit (tag losses); empty for softmax
};

/// Mean softmax cross-entropy over the columns of `logits` (classes x batch).
template <class T>
BatchLoss<T> softmax_cross_entropy(const Matrix<T>& logits, std::span<const int> targets) {
  require_shape(static_cast<Eigen::Index>(targets.size()) == logits.cols(), "label count");
  BatchLoss<T> out;
  out.grad.resize(logits.rows(), logits.cols());
  const T inv_batch = T(1) / static_cast<T>(logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    auto one = softmax_cross_entropy<T>(logits.col(b), targets[b]);
    out.loss += one.loss * inv_batch;
    out.grad.col(b) = one.grad * inv_batch;
  }
  return out;
}

/// Mean sigmoid binary cross-entropy over every (output, sample) cell, for
/// multi-label targets in {0, 1}. per_output holds the per-tag mean loss.
template <class T>
BatchLoss<T> sigmoid_cross_entropy(const Matrix<T>& logits, const Matrix<T>& targets) {
  require_shape(logits.rows() == targets.rows() && logits.cols() == targets.cols(), "tag target shape");
  const auto cells = static_cast<T>(logits.size());
  const auto z = logits.array();
  const auto y = targets.array();
  const Matrix<T> cell_loss =
      (z.max(T(0)) - z * y + (T(1) + (-z.abs()).exp()).log()).matrix();
  BatchLoss<T> out;
  out.loss = cell_loss.sum() / cells;
  out.per_output = cell_loss.rowwise().mean();
  out.grad = ((T(1) / (T(1) + (-z).exp())) - y).matrix() / cells;
  return out;
}

/// Cosine similarity between two nonzero vectors.
template <class T>
T cosine_relevance(const Eigen::Ref<const Vector<T>>& a, const Eigen::Ref<const Vector<T>>& b) {
  require_shape(a.size() == b.size(), "cosine operands differ in length");
  const T na = a.norm(), nb = b.norm();
  if (!(na > T(0)) || !(nb > T(0))) throw Error("undefined cosine");
  return a.dot(b) / (na * nb);
}

template <class T>
struct CosineGrad {
  T value{};
  Vector<T> d_a;
  Vector<T> d_b;
};

template <class T>
CosineGrad<T> cosine_relevance_grad(const Eigen::Ref<const Vector<T>>& a,
                                    const Eigen::Ref<const Vector<T>>& b) {
  const T r = cosine_relevance<T>(a, b);
  const T na = a.norm(), nb = b.norm();
  return {r, b / (na * nb) - r * a / (na * na), a / (na * nb) - r * b / (nb * nb)};
}

template <class T>
struct MarginLoss {
  T loss{};
  Vector<T> d_anchor;
  Vector<T> d_positive;
  std::vector<Vector<T>> d_negatives;
  int active_terms = 0;
};

/// sum over negatives of max(0, margin - R(A, O+) + R(A, O-)). The hinge
/// subgradient is 0 at the kink (a term contributes only when > 0).
template <class T>
MarginLoss<T> max_margin_loss(const Eigen::Ref<const Vector<T>>& anchor,
                              const Eigen::Ref<const Vector<T>>& positive,
                              const std::vector<Vector<T>>& negatives, T margin) {
  const auto pos = cosine_relevance_grad<T>(anchor, positive);
  MarginLoss<T> out;
  out.d_anchor = Vector<T>::Zero(anchor.size());
  out.d_positive = Vector<T>::Zero(positive.size());
  out.d_negatives.reserve(negatives.size());
  for (const auto& negative : negatives) {
    const auto neg = cosine_relevance_grad<T>(anchor, negative);
    const T term = margin - pos.value + neg.value;
    if (term > T(0)) {
      out.loss += term;
      ++out.active_terms;
      out.d_anchor += neg.d_a - pos.d_a;
      out.d_positive -= pos.d_b;
      out.d_negatives.push_back(neg.d_b);
    } else {
      out.d_negatives.push_back(Vector<T>::Zero(negative.size()));
    }
  }
  return out;
}

/// The same loss evaluated directly from relevance scores.
inline double max_margin_from_scores(double positive, std::span<const double> negatives, double margin) {
  double loss = 0.0;
  for (double r : negatives) loss += std::max(0.0, margin - positive + r);
  return loss;
}

}  // namespace artistembed::nn
