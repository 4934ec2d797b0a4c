#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <vector>

#include "wildfire/autodiff/conv.hpp"
#include "wildfire/autodiff/tensor.hpp"

namespace wildfire::ad {

/// Affine map over the last dimension: y = x Wᵀ + b with W: out×in.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() == 0 || weight.rank() != 2)
    throw ShapeError("linear: need x[..., in] and W[out, in], got " + shape_str(x.shape()) + " and " +
                     shape_str(weight.shape()));
  const std::size_t in = x.shape().back(), out_f = weight.dim(0);
  if (weight.dim(1) != in)
    throw ShapeError("linear: input features " + std::to_string(in) + " do not match weight " +
                     shape_str(weight.shape()));
  if (bias.defined() && bias.shape() != Shape{out_f})
    throw ShapeError("linear: bias shape " + shape_str(bias.shape()) + " does not match " + std::to_string(out_f));
  const std::size_t rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = out_f;
  std::vector<T> out(rows * out_f);
  detail::MatMap<T> y(out.data(), rows, out_f);
  detail::AlignedVector<T> xkeep, wkeep;
  y.noalias() = detail::ConstMatMap<T>(detail::aligned_input(x.values(), xkeep), rows, in) *
                detail::ConstMatMap<T>(detail::aligned_input(weight.values(), wkeep), out_f, in).transpose();
  if (bias.defined())
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_f; ++j) out[r * out_f + j] += bias[j];

  auto xn = x.node_ptr(), wn = weight.node_ptr(), bn = bias.node_ptr();
  return Tensor<T>::from_op(std::move(shape), std::move(out), "linear", {x, weight, bias},
                            [xn, wn, bn, rows, in, out_f](Node<T>& node) {
                              detail::AlignedVector<T> gkeep, keep;
                              detail::ConstMatMap<T> dy(detail::aligned_input(node.grad, gkeep), rows, out_f);
                              if (xn->requires_grad)
                                detail::MatMap<T>(xn->grad_buffer().data(), rows, in).noalias() +=
                                    dy * detail::ConstMatMap<T>(detail::aligned_input(wn->value, keep), out_f, in);
                              if (wn->requires_grad)
                                detail::MatMap<T>(wn->grad_buffer().data(), out_f, in).noalias() +=
                                    dy.transpose() *
                                    detail::ConstMatMap<T>(detail::aligned_input(xn->value, keep), rows, in);
                              if (bn && bn->requires_grad) {
                                auto& g = bn->grad_buffer();
                                for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t j = 0; j < out_f; ++j) g[j] += node.grad[r * out_f + j];
                              }
                            });
}

/// Optional additive attention bias shared by groups of batch items: item b
/// uses slice (b mod groups), each slice T×T.
template <class T>
struct AttentionMask {
  std::shared_ptr<const std::vector<T>> values;
  std::size_t groups = 0;
};

namespace detail {

/// Scaled dot-product attention over packed projections.
/// qkv: N×T×3E laid out [q | k | v], head h owning columns h·dh..(h+1)·dh of
/// each block. Writes the N×T×E output and the N×heads×T×T probabilities.
template <class T>
void attention_forward(const T* qkv_in, std::size_t n, std::size_t t, std::size_t e, std::size_t heads,
                       const AttentionMask<T>* mask, T* out, T* probs) {
  AlignedVector<T> keep;
  const T* qkv = aligned_input(qkv_in, n * t * 3 * e, keep);
  RowMatrix<T> p(t, t);
  const std::size_t dh = e / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(3 * e));
  const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(e));
  using Strided = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;
  using StridedOut = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;
  for (std::size_t b = 0; b < n; ++b) {
    const T* base = qkv + b * t * 3 * e;
    const T* bias = mask && mask->values ? mask->values->data() + (b % mask->groups) * t * t : nullptr;
    for (std::size_t h = 0; h < heads; ++h) {
      Strided q(base + h * dh, t, dh, stride), k(base + e + h * dh, t, dh, stride),
          v(base + 2 * e + h * dh, t, dh, stride);
      p.noalias() = (q * k.transpose()) * scale;
      for (std::size_t i = 0; i < t; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < t; ++j) {
          if (bias) p(i, j) += bias[i * t + j];
          mx = std::max(mx, p(i, j));
        }
        T s = 0;
        for (std::size_t j = 0; j < t; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          s += p(i, j);
        }
        for (std::size_t j = 0; j < t; ++j) p(i, j) /= s;
      }
      MatMap<T>(probs + (b * heads + h) * t * t, t, t) = p;
      StridedOut o(out + b * t * e + h * dh, t, dh, out_stride);
      o.noalias() = p * v;
    }
  }
}

}  // namespace detail

/// Softmax attention core. qkv: N×T×3E → N×T×E, heads concatenated.
template <class T>
Tensor<T> attention(const Tensor<T>& qkv, std::size_t heads, const AttentionMask<T>& mask = {}) {
  if (qkv.rank() != 3 || qkv.dim(2) % 3)
    throw ShapeError("attention: expected N×T×3E packed projections, got " + shape_str(qkv.shape()));
  const std::size_t n = qkv.dim(0), t = qkv.dim(1), e = qkv.dim(2) / 3;
  if (heads == 0 || e % heads)
    throw ShapeError("attention: embedding " + std::to_string(e) + " is not divisible by " + std::to_string(heads) +
                     " heads");
  if (mask.values && (mask.groups == 0 || mask.values->size() != mask.groups * t * t))
    throw ShapeError("attention: mask does not match token count");
  std::vector<T> out(n * t * e);
  auto probs = std::make_shared<std::vector<T>>(n * heads * t * t);
  detail::attention_forward(qkv.values().data(), n, t, e, heads, &mask, out.data(), probs->data());

  auto qn = qkv.node_ptr();
  return Tensor<T>::from_op(
      Shape{n, t, e}, std::move(out), "attention", {qkv}, [qn, probs, n, t, e, heads](Node<T>& node) {
        const std::size_t dh = e / heads;
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(3 * e));
        const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(e));
        using Strided = Eigen::Map<const detail::RowMatrix<T>, 0, Eigen::OuterStride<>>;
        using StridedMut = Eigen::Map<detail::RowMatrix<T>, 0, Eigen::OuterStride<>>;
        auto& g = qn->grad_buffer();
        detail::RowMatrix<T> dp(t, t), p(t, t);
        detail::AlignedVector<T> vkeep, gkeep;
        const T* value = detail::aligned_input(qn->value, vkeep);
        const T* grad = detail::aligned_input(node.grad, gkeep);
        for (std::size_t b = 0; b < n; ++b) {
          const T* base = value + b * t * 3 * e;
          T* gbase = g.data() + b * t * 3 * e;
          for (std::size_t h = 0; h < heads; ++h) {
            Strided q(base + h * dh, t, dh, stride), k(base + e + h * dh, t, dh, stride),
                v(base + 2 * e + h * dh, t, dh, stride);
            Strided dout(grad + b * t * e + h * dh, t, dh, out_stride);
            p = detail::ConstMatMap<T>(probs->data() + (b * heads + h) * t * t, t, t);
            StridedMut dq(gbase + h * dh, t, dh, stride), dk(gbase + e + h * dh, t, dh, stride),
                dv(gbase + 2 * e + h * dh, t, dh, stride);
            dv.noalias() += p.transpose() * dout;
            dp.noalias() = dout * v.transpose();
            // Softmax Jacobian: dS = P ⊙ (dP - rowsum(dP ⊙ P)).
            for (std::size_t i = 0; i < t; ++i) {
              T dot = 0;
              for (std::size_t j = 0; j < t; ++j) dot += dp(i, j) * p(i, j);
              for (std::size_t j = 0; j < t; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
            }
            dq.noalias() += dp * k;
            dk.noalias() += dp.transpose() * q;
          }
        }
      });
}

/// Softmax probabilities N×heads×T×T of the attention core (no graph).
template <class T>
std::vector<T> attention_probabilities(const Tensor<T>& qkv, std::size_t heads, const AttentionMask<T>& mask = {}) {
  const std::size_t n = qkv.dim(0), t = qkv.dim(1), e = qkv.dim(2) / 3;
  if (heads == 0 || e % heads) throw ShapeError("attention: embedding not divisible by heads");
  std::vector<T> out(n * t * e), probs(n * heads * t * t);
  detail::attention_forward(qkv.values().data(), n, t, e, heads, &mask, out.data(), probs.data());
  return probs;
}

template <class T>
struct AttentionParams {
  Tensor<T> qkv_weight;  ///< 3E×E
  Tensor<T> qkv_bias;    ///< 3E
  Tensor<T> out_weight;  ///< E×E
  Tensor<T> out_bias;    ///< E
};

/// Multi-head self-attention over N×T×E tokens: packed Q/K/V projection,
/// per-head softmax(QKᵀ/√(E/heads))V, concatenation, output projection.
template <class T>
Tensor<T> multi_head_self_attention(const Tensor<T>& tokens, const AttentionParams<T>& p, std::size_t heads,
                                    const AttentionMask<T>& mask = {}) {
  if (tokens.rank() != 3) throw ShapeError("attention: tokens must be N×T×E, got " + shape_str(tokens.shape()));
  const std::size_t e = tokens.dim(2);
  if (heads == 0 || e % heads)
    throw ShapeError("attention: embedding " + std::to_string(e) + " is not divisible by " + std::to_string(heads) +
                     " heads");
  auto qkv = linear(tokens, p.qkv_weight, p.qkv_bias);
  return linear(attention(qkv, heads, mask), p.out_weight, p.out_bias);
}

}  // namespace wildfire::ad
