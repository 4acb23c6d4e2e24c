#pragma once

#include <span>

#include "irview/tensor.hpp"

namespace irview {

/// Embedding loss, output loss and their unweighted sum, all mean-reduced.
struct LossBreakdown {
  double embedding = 0.0;  // L_e
  double output = 0.0;     // L_o
  double total = 0.0;      // L_t = L_e + L_o

  bool operator==(const LossBreakdown&) const = default;
};

/// Mean of squared differences, accumulated in double in index order.
double mse(std::span<const float> a, std::span<const float> b);
double mse(std::span<const double> a, std::span<const double> b);

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(b, a.shape(), "mse");
  return mse(a.values(), b.values());
}

/// mse(e1, e2) between the fused latent and the block-1 target embedding.
template <typename T>
double embedding_loss(const Tensor<T>& e1, const Tensor<T>& e2) {
  return mse(e1, e2);
}

/// mse(y1, y2) between generated and ground-truth views.
template <typename T>
double output_loss(const Tensor<T>& y1, const Tensor<T>& y2) {
  return mse(y1, y2);
}

template <typename T>
LossBreakdown total_loss(const Tensor<T>& e1, const Tensor<T>& e2, const Tensor<T>& y1, const Tensor<T>& y2) {
  LossBreakdown l;
  l.embedding = embedding_loss(e1, e2);
  l.output = output_loss(y1, y2);
  l.total = l.embedding + l.output;
  return l;
}

/// d/dpred of weight * mse(pred, target) = 2 * weight * (pred - target) / N.
template <typename T>
Tensor<T> mse_gradient(const Tensor<T>& pred, const Tensor<T>& target, double weight = 1.0);

}  // namespace irview
