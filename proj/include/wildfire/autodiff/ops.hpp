#pragma once

#include <cmath>
#include <limits>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "wildfire/autodiff/tensor.hpp"

// Elementwise, reduction and layout operations.

namespace wildfire::ad {

namespace detail {

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
}

template <class T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  if (a.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return Tensor<T>::from_op(a.shape(), std::move(v), "add", {a, b}, [an, bn](Node<T>& out) {
    for (auto* p : {an.get(), bn.get()}) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return Tensor<T>::from_op(a.shape(), std::move(v), "sub", {a, b}, [an, bn](Node<T>& out) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return Tensor<T>::from_op(a.shape(), std::move(v), "mul", {a, b}, [an, bn](Node<T>& out) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * an->value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * s;
  auto an = a.node_ptr();
  return Tensor<T>::from_op(a.shape(), std::move(v), "scale", {a}, [an, s](Node<T>& out) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * s;
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T x : a.data()) s += x;
  auto an = a.node_ptr();
  return Tensor<T>::from_op(Shape{}, {s}, "sum", {a}, [an](Node<T>& out) {
    auto& g = an->grad_buffer();
    for (auto& x : g) x += out.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Σ a·w with w a constant of the same shape; a convenient scalar probe for
/// gradient checks.
template <class T>
Tensor<T> weighted_sum(const Tensor<T>& a, std::vector<T> w) {
  if (w.size() != a.numel()) throw ShapeError("weighted_sum: weight count mismatch");
  T s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += a[i] * w[i];
  auto an = a.node_ptr();
  return Tensor<T>::from_op(Shape{}, {s}, "weighted_sum", {a}, [an, w = std::move(w)](Node<T>& out) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[0] * w[i];
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] > T(0) ? a[i] : T(0);
  auto an = a.node_ptr();
  return Tensor<T>::from_op(a.shape(), std::move(v), "relu", {a}, [an](Node<T>& out) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (an->value[i] > T(0)) g[i] += out.grad[i];
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const T x = a[i];
    // Branches keep exp() from overflowing for large |x|.
    v[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
  }
  auto an = a.node_ptr();
  return Tensor<T>::from_op(a.shape(), std::move(v), "sigmoid", {a}, [an](Node<T>& out) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = out.value[i];
      g[i] += out.grad[i] * s * (T(1) - s);
    }
  });
}

/// Exact (erf) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = T(0.5) * a[i] * (T(1) + std::erf(a[i] * kInvSqrt2));
  auto an = a.node_ptr();
  return Tensor<T>::from_op(a.shape(), std::move(v), "gelu", {a}, [an](Node<T>& out) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = an->value[i];
      const T cdf = T(0.5) * (T(1) + std::erf(x * kInvSqrt2));
      const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * x * x);
      g[i] += out.grad[i] * (cdf + x * pdf);
    }
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  auto an = a.node_ptr();
  return Tensor<T>::from_op(std::move(shape), a.values(), "reshape", {a}, [an](Node<T>& out) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
  });
}

/// out[i] = a[index[i]]; the backward pass scatter-adds. Every layout
/// operation below (token views, window partitioning, space/depth moves) is a
/// gather with a specific index map.
template <class T>
Tensor<T> gather(const Tensor<T>& a, Shape shape, std::shared_ptr<const std::vector<std::size_t>> index,
                 const char* op = "gather") {
  if (index->size() != numel(shape)) throw ShapeError(std::string(op) + ": index map size mismatch");
  std::vector<T> v(index->size());
  const auto& src = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = src[(*index)[i]];
  auto an = a.node_ptr();
  return Tensor<T>::from_op(std::move(shape), std::move(v), op, {a}, [an, index](Node<T>& out) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < index->size(); ++i) g[(*index)[i]] += out.grad[i];
  });
}

/// N×C×H×W -> N×(H·W)×C.
template <class T>
Tensor<T> to_tokens(const Tensor<T>& x) {
  detail::require_rank(x, 4, "to_tokens");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  auto idx = std::make_shared<std::vector<std::size_t>>(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t t = 0; t < hw; ++t)
      for (std::size_t k = 0; k < c; ++k) (*idx)[(b * hw + t) * c + k] = (b * c + k) * hw + t;
  return gather(x, Shape{n, hw, c}, std::move(idx), "to_tokens");
}

/// N×(H·W)×C -> N×C×H×W.
template <class T>
Tensor<T> from_tokens(const Tensor<T>& t, std::size_t h, std::size_t w) {
  detail::require_rank(t, 3, "from_tokens");
  const std::size_t n = t.dim(0), hw = t.dim(1), c = t.dim(2);
  if (hw != h * w) throw ShapeError("from_tokens: " + std::to_string(hw) + " tokens do not form a " +
                                    std::to_string(h) + "x" + std::to_string(w) + " grid");
  auto idx = std::make_shared<std::vector<std::size_t>>(t.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t p = 0; p < hw; ++p) (*idx)[(b * c + k) * hw + p] = (b * hw + p) * c + k;
  return gather(t, Shape{n, c, h, w}, std::move(idx), "from_tokens");
}

/// Moves each f×f spatial block into channels: N×C×H×W -> N×(f²C)×(H/f)×(W/f).
/// Output channel (i·f + j)·C + c holds input channel c at block offset (i, j).
template <class T>
Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t f) {
  detail::require_rank(x, 4, "space_to_depth");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (f == 0 || h % f || w % f) throw ShapeError("space_to_depth: spatial dims not divisible by factor");
  const std::size_t ho = h / f, wo = w / f, co = c * f * f;
  auto idx = std::make_shared<std::vector<std::size_t>>(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t j = 0; j < f; ++j)
        for (std::size_t k = 0; k < c; ++k)
          for (std::size_t r = 0; r < ho; ++r)
            for (std::size_t q = 0; q < wo; ++q) {
              const std::size_t oc = (i * f + j) * c + k;
              (*idx)[((b * co + oc) * ho + r) * wo + q] = ((b * c + k) * h + r * f + i) * w + q * f + j;
            }
  return gather(x, Shape{n, co, ho, wo}, std::move(idx), "space_to_depth");
}

/// Inverse of space_to_depth.
template <class T>
Tensor<T> depth_to_space(const Tensor<T>& x, std::size_t f) {
  detail::require_rank(x, 4, "depth_to_space");
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (f == 0 || ci % (f * f)) throw ShapeError("depth_to_space: channels not divisible by factor²");
  const std::size_t c = ci / (f * f), ho = h * f, wo = w * f;
  auto idx = std::make_shared<std::vector<std::size_t>>(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t r = 0; r < ho; ++r)
        for (std::size_t q = 0; q < wo; ++q) {
          const std::size_t i = r % f, j = q % f;
          const std::size_t ic = (i * f + j) * c + k;
          (*idx)[((b * c + k) * ho + r) * wo + q] = ((b * ci + ic) * h + r / f) * w + q / f;
        }
  return gather(x, Shape{n, c, ho, wo}, std::move(idx), "depth_to_space");
}

/// Concatenation along the channel axis of N×C×H×W tensors.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  for (const auto& x : xs) {
    detail::require_rank(x, 4, "concat_channels");
    if (x.dim(0) != xs[0].dim(0) || x.dim(2) != xs[0].dim(2) || x.dim(3) != xs[0].dim(3))
      throw ShapeError("concat_channels: " + shape_str(x.shape()) + " does not match " + shape_str(xs[0].shape()));
  }
  const std::size_t n = xs[0].dim(0), hw = xs[0].dim(2) * xs[0].dim(3);
  std::size_t c_total = 0;
  for (const auto& x : xs) c_total += x.dim(1);
  std::vector<T> v(n * c_total * hw);
  std::size_t c_off = 0;
  for (const auto& x : xs) {
    const std::size_t c = x.dim(1);
    for (std::size_t b = 0; b < n; ++b)
      std::copy_n(x.values().begin() + b * c * hw, c * hw, v.begin() + (b * c_total + c_off) * hw);
    c_off += c;
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& x : xs) nodes.push_back(x.node_ptr());
  return Tensor<T>::from_op(Shape{n, c_total, xs[0].dim(2), xs[0].dim(3)}, std::move(v), "concat", xs,
                            [nodes, n, c_total, hw](Node<T>& out) {
                              std::size_t c_off = 0;
                              for (const auto& p : nodes) {
                                const std::size_t c = p->shape[1];
                                if (p->requires_grad) {
                                  auto& g = p->grad_buffer();
                                  for (std::size_t b = 0; b < n; ++b)
                                    for (std::size_t i = 0; i < c * hw; ++i)
                                      g[b * c * hw + i] += out.grad[(b * c_total + c_off) * hw + i];
                                }
                                c_off += c;
                              }
                            });
}

/// x (N×T×E) plus a per-token table p (1×T×E) broadcast over the batch.
template <class T>
Tensor<T> add_broadcast_batch(const Tensor<T>& x, const Tensor<T>& p) {
  detail::require_rank(x, 3, "add_broadcast_batch");
  if (p.rank() != 3 || p.dim(0) != 1 || p.dim(1) != x.dim(1) || p.dim(2) != x.dim(2))
    throw ShapeError("add_broadcast_batch: table " + shape_str(p.shape()) + " does not fit " + shape_str(x.shape()));
  const std::size_t per = p.numel(), n = x.dim(0);
  std::vector<T> v(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < per; ++i) v[b * per + i] = x[b * per + i] + p[i];
  auto xn = x.node_ptr(), pn = p.node_ptr();
  return Tensor<T>::from_op(x.shape(), std::move(v), "add_broadcast", {x, p}, [xn, pn, n, per](Node<T>& out) {
    if (xn->requires_grad) {
      auto& g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (pn->requires_grad) {
      auto& g = pn->grad_buffer();
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < per; ++i) g[i] += out.grad[b * per + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Shifted windows
// ---------------------------------------------------------------------------

struct WindowGrid {
  std::size_t window = 0;
  std::size_t shift = 0;
  std::size_t rows = 0;  ///< windows per column
  std::size_t cols = 0;  ///< windows per row
  std::size_t count() const { return rows * cols; }
};

inline WindowGrid window_grid(std::size_t h, std::size_t w, std::size_t window, std::size_t shift) {
  if (window == 0 || h % window || w % window)
    throw ShapeError("window " + std::to_string(window) + " does not divide " + std::to_string(h) + "x" +
                     std::to_string(w));
  if (shift >= window) throw ShapeError("window shift must be smaller than the window");
  return {window, shift, h / window, w / window};
}

namespace detail {

// Flat index in N×C×H×W of the element that lands at window token (t, k).
inline std::vector<std::size_t> window_index(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                                             const WindowGrid& g) {
  const std::size_t ws = g.window, tokens = ws * ws;
  std::vector<std::size_t> idx(n * c * h * w);
  std::size_t o = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t wr = 0; wr < g.rows; ++wr)
      for (std::size_t wc = 0; wc < g.cols; ++wc)
        for (std::size_t t = 0; t < tokens; ++t) {
          // Cyclic shift: the shifted map at (r, q) reads the original at (r + s, q + s).
          const std::size_t r = (wr * ws + t / ws + g.shift) % h;
          const std::size_t q = (wc * ws + t % ws + g.shift) % w;
          for (std::size_t k = 0; k < c; ++k) idx[o++] = ((b * c + k) * h + r) * w + q;
        }
  return idx;
}

}  // namespace detail

/// Cyclically shifts the N×C×H×W map by -shift in both axes, then splits it
/// into non-overlapping window×window groups. Output is (N·nW)×window²×C,
/// windows row-major per image and tokens row-major per window.
template <class T>
Tensor<T> window_partition(const Tensor<T>& x, std::size_t window, std::size_t shift) {
  detail::require_rank(x, 4, "window_partition");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const WindowGrid g = window_grid(h, w, window, shift);
  auto idx = std::make_shared<const std::vector<std::size_t>>(detail::window_index(n, c, h, w, g));
  return gather(x, Shape{n * g.count(), window * window, c}, std::move(idx), "window_partition");
}

/// Exact inverse of window_partition for an N×C×H×W target.
template <class T>
Tensor<T> window_reverse(const Tensor<T>& windows, std::size_t n, std::size_t h, std::size_t w, std::size_t window,
                         std::size_t shift) {
  detail::require_rank(windows, 3, "window_reverse");
  const WindowGrid g = window_grid(h, w, window, shift);
  const std::size_t c = windows.dim(2);
  if (windows.dim(0) != n * g.count() || windows.dim(1) != window * window)
    throw ShapeError("window_reverse: " + shape_str(windows.shape()) + " does not match the window grid");
  const auto forward = detail::window_index(n, c, h, w, g);
  auto idx = std::make_shared<std::vector<std::size_t>>(forward.size());
  for (std::size_t i = 0; i < forward.size(); ++i) (*idx)[forward[i]] = i;
  return gather(windows, Shape{n, c, h, w}, std::move(idx), "window_reverse");
}

/// Additive attention mask for shifted windows: 0 between tokens that came
/// from the same region of the unshifted map, -inf otherwise. Shape
/// nW×window²×window², all zero when shift is 0.
template <class T>
std::vector<T> shifted_window_mask(std::size_t h, std::size_t w, std::size_t window, std::size_t shift) {
  const WindowGrid g = window_grid(h, w, window, shift);
  const std::size_t tokens = window * window;
  std::vector<T> mask(g.count() * tokens * tokens, T(0));
  if (shift == 0) return mask;
  auto region = [&](std::size_t p, std::size_t extent) -> std::size_t {
    if (p < extent - window) return 0;
    if (p < extent - shift) return 1;
    return 2;
  };
  for (std::size_t wr = 0; wr < g.rows; ++wr)
    for (std::size_t wc = 0; wc < g.cols; ++wc) {
      T* m = mask.data() + (wr * g.cols + wc) * tokens * tokens;
      std::vector<std::size_t> label(tokens);
      for (std::size_t t = 0; t < tokens; ++t)
        label[t] = region(wr * window + t / window, h) * 3 + region(wc * window + t % window, w);
      for (std::size_t i = 0; i < tokens; ++i)
        for (std::size_t j = 0; j < tokens; ++j)
          if (label[i] != label[j]) m[i * tokens + j] = -std::numeric_limits<T>::infinity();
    }
  return mask;
}

}  // namespace wildfire::ad
