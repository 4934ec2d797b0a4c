#pragma once

#include <cstddef>
#include <vector>

#include "wildfire/autodiff/tensor.hpp"

namespace wildfire::train {

/// Soft dice loss. For each batch item i (sums over all of its elements):
///   loss_i = 1 - (2 Σ p·t + smooth) / (Σ p + Σ t + smooth)
/// and the result is the mean of loss_i over the batch (first) dimension.
template <class T>
ad::Tensor<T> dice_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& target, T smooth = T(1)) {
  if (pred.shape() != target.shape())
    throw ShapeError("dice_loss: prediction " + ad::shape_str(pred.shape()) + " vs target " +
                     ad::shape_str(target.shape()));
  if (pred.rank() == 0 || pred.dim(0) == 0) throw ShapeError("dice_loss: empty batch");
  const std::size_t n = pred.dim(0), per = pred.numel() / n;
  std::vector<T> inter(n, T(0)), denom(n, T(0));
  T total = 0;
  for (std::size_t b = 0; b < n; ++b) {
    T i_sum = 0, p_sum = 0, t_sum = 0;
    for (std::size_t k = 0; k < per; ++k) {
      const T p = pred[b * per + k], t = target[b * per + k];
      i_sum += p * t;
      p_sum += p;
      t_sum += t;
    }
    inter[b] = T(2) * i_sum + smooth;
    denom[b] = p_sum + t_sum + smooth;
    total += T(1) - inter[b] / denom[b];
  }
  auto pn = pred.node_ptr(), tn = target.node_ptr();
  return ad::Tensor<T>::from_op(
      ad::Shape{}, {total / static_cast<T>(n)}, "dice_loss", {pred},
      [pn, tn, inter = std::move(inter), denom = std::move(denom), n, per](ad::Node<T>& node) {
        auto& g = pn->grad_buffer();
        const T upstream = node.grad[0] / static_cast<T>(n);
        for (std::size_t b = 0; b < n; ++b) {
          const T d = denom[b], d2 = d * d;
          for (std::size_t k = 0; k < per; ++k) {
            const T t = tn->value[b * per + k];
            g[b * per + k] -= upstream * (T(2) * t * d - inter[b]) / d2;
          }
        }
      });
}

}  // namespace wildfire::train
