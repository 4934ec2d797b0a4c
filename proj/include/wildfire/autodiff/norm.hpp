#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "wildfire/autodiff/tensor.hpp"

namespace wildfire::ad {

enum class Mode { Train, Eval };

/// Running per-channel statistics. Plain buffers, never differentiated.
template <class T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

/// Per-channel normalisation of N×C×H×W input.
///
/// Train mode normalises with the biased batch variance and folds the batch
/// mean and unbiased variance into the running statistics with the given
/// momentum. Eval mode uses the running statistics.
template <class T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                       Mode mode, T eps = T(1e-5), T momentum = T(0.1)) {
  if (x.rank() != 4) throw ShapeError("batch_norm2d: input must be N×C×H×W, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (n == 0 || hw == 0) throw ShapeError("batch_norm2d: zero-size batch");
  const std::initializer_list<const Tensor<T>*> per_channel{&gamma, &beta, &state.running_mean, &state.running_var};
  for (const Tensor<T>* t : per_channel)
    if (t->shape() != Shape{c})
      throw ShapeError("batch_norm2d: per-channel parameter has shape " + shape_str(t->shape()) + ", expected [" +
                       std::to_string(c) + "]");

  const std::size_t m = n * hw;
  std::vector<T> mean(c), inv_std(c);
  if (mode == Mode::Train) {
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t k = 0; k < c; ++k) {
      T s = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.values().data() + (b * c + k) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const T mu = s / static_cast<T>(m);
      T v = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.values().data() + (b * c + k) * hw;
        for (std::size_t i = 0; i < hw; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const T var = v / static_cast<T>(m);
      mean[k] = mu;
      inv_std[k] = T(1) / std::sqrt(var + eps);
      const T unbiased = m > 1 ? v / static_cast<T>(m - 1) : var;
      rm[k] = (T(1) - momentum) * rm[k] + momentum * mu;
      rv[k] = (T(1) - momentum) * rv[k] + momentum * unbiased;
    }
  } else {
    for (std::size_t k = 0; k < c; ++k) {
      mean[k] = state.running_mean[k];
      inv_std[k] = T(1) / std::sqrt(state.running_var[k] + eps);
    }
  }

  std::vector<T> xhat(x.numel()), out(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t off = (b * c + k) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xhat[off + i] = (x[off + i] - mean[k]) * inv_std[k];
        out[off + i] = gamma[k] * xhat[off + i] + beta[k];
      }
    }

  auto xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr();
  const bool train = mode == Mode::Train;
  return Tensor<T>::from_op(
      x.shape(), std::move(out), "batch_norm2d", {x, gamma, beta},
      [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw, m, train](Node<T>& node) {
        const auto& dy = node.grad;
        for (std::size_t k = 0; k < c; ++k) {
          T sum_dy = 0, sum_dy_xhat = 0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + k) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_dy += dy[off + i];
              sum_dy_xhat += dy[off + i] * xhat[off + i];
            }
          }
          if (gn->requires_grad) gn->grad_buffer()[k] += sum_dy_xhat;
          if (bn->requires_grad) bn->grad_buffer()[k] += sum_dy;
          if (!xn->requires_grad) continue;
          auto& dx = xn->grad_buffer();
          const T g = gn->value[k], is = inv_std[k];
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + k) * hw;
            if (train) {
              const T inv_m = T(1) / static_cast<T>(m);
              for (std::size_t i = 0; i < hw; ++i)
                dx[off + i] += g * is * (dy[off + i] - inv_m * sum_dy - xhat[off + i] * inv_m * sum_dy_xhat);
            } else {
              for (std::size_t i = 0; i < hw; ++i) dx[off + i] += g * is * dy[off + i];
            }
          }
        }
      });
}

/// Normalisation over the last dimension followed by a per-feature affine map.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t e = x.shape().back(), rows = x.numel() / e;
  if (gamma.shape() != Shape{e} || beta.shape() != Shape{e})
    throw ShapeError("layer_norm: affine parameters must have shape [" + std::to_string(e) + "]");
  std::vector<T> xhat(x.numel()), out(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = x.values().data() + r * e;
    T mu = 0;
    for (std::size_t i = 0; i < e; ++i) mu += p[i];
    mu /= static_cast<T>(e);
    T var = 0;
    for (std::size_t i = 0; i < e; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<T>(e);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < e; ++i) {
      xhat[r * e + i] = (p[i] - mu) * inv_std[r];
      out[r * e + i] = gamma[i] * xhat[r * e + i] + beta[i];
    }
  }
  auto xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr();
  return Tensor<T>::from_op(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, e](Node<T>& node) {
        const auto& dy = node.grad;
        if (gn->requires_grad || bn->requires_grad) {
          auto& gg = gn->grad_buffer();
          auto& gb = bn->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < e; ++i) {
              gg[i] += dy[r * e + i] * xhat[r * e + i];
              gb[i] += dy[r * e + i];
            }
        }
        if (!xn->requires_grad) return;
        auto& dx = xn->grad_buffer();
        const T inv_e = T(1) / static_cast<T>(e);
        for (std::size_t r = 0; r < rows; ++r) {
          T sum = 0, sum_xhat = 0;
          for (std::size_t i = 0; i < e; ++i) {
            const T d = dy[r * e + i] * gn->value[i];
            sum += d;
            sum_xhat += d * xhat[r * e + i];
          }
          for (std::size_t i = 0; i < e; ++i) {
            const T d = dy[r * e + i] * gn->value[i];
            dx[r * e + i] += inv_std[r] * (d - inv_e * sum - xhat[r * e + i] * inv_e * sum_xhat);
          }
        }
      });
}

}  // namespace wildfire::ad
