#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "wildfire/autodiff/tensor.hpp"

namespace wildfire::ad {

/// Square 2-D convolution geometry.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;

  void validate() const {
    if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 || dilation == 0)
      throw ConfigError("conv spec: channels, kernel, stride and dilation must be positive");
  }

  /// Extent covered by one dilated kernel: d(k-1)+1.
  std::size_t span() const { return dilation * (kernel - 1) + 1; }

  /// floor((in + 2p - d(k-1) - 1) / s) + 1; throws if non-positive.
  std::size_t conv_out(std::size_t in) const {
    if (in + 2 * padding < span())
      throw ShapeError("conv: input extent " + std::to_string(in) + " with padding " + std::to_string(padding) +
                       " is smaller than the dilated kernel extent " + std::to_string(span()));
    return (in + 2 * padding - span()) / stride + 1;
  }

  /// (in-1)s - 2p + d(k-1) + output_padding + 1.
  std::size_t transpose_out(std::size_t in, std::size_t output_padding = 0) const {
    const std::size_t full = (in - 1) * stride + span() + output_padding;
    if (full <= 2 * padding) throw ShapeError("transpose conv: non-positive output size");
    return full - 2 * padding;
  }
};

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;
template <class T>
using AlignedVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Eigen's vectorised kernels choose their loop peeling from an operand's
/// address, so the rounding of a product could depend on where the allocator
/// put a buffer. Operands are therefore read from storage aligned to
/// EIGEN_MAX_ALIGN_BYTES (Eigen's own heap alignment); offsets inside a
/// buffer are fixed by the shapes.
inline constexpr std::uintptr_t kEigenAlign = EIGEN_MAX_ALIGN_BYTES > 0 ? EIGEN_MAX_ALIGN_BYTES : 1;

template <class T>
const T* aligned_input(const T* p, std::size_t n, AlignedVector<T>& keep) {
  if (reinterpret_cast<std::uintptr_t>(p) % kEigenAlign == 0) return p;
  keep = Eigen::Map<const AlignedVector<T>>(p, static_cast<Eigen::Index>(n));
  return keep.data();
}

template <class T>
const T* aligned_input(const std::vector<T>& v, AlignedVector<T>& keep) {
  return aligned_input(v.data(), v.size(), keep);
}

/// Geometry linking an "image" (C×ih×iw) and a sampling grid (gh×gw) such
/// that grid position (y, x) with kernel tap (i, j) reads image pixel
/// (y·s - p + i·d, x·s - p + j·d).
struct Im2Col {
  std::size_t channels, ih, iw, gh, gw, k, s, d, p;

  std::size_t rows() const { return channels * k * k; }
  std::size_t cols() const { return gh * gw; }

  /// cols[(c·k + i)·k + j][y·gw + x] = image value or 0 outside.
  template <class T>
  void gather(const T* image, T* cols_out) const {
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          T* row = cols_out + ((c * k + i) * k + j) * cols();
          const T* plane = image + c * ih * iw;
          for (std::size_t y = 0; y < gh; ++y) {
            const long iy = static_cast<long>(y * s + i * d) - static_cast<long>(p);
            T* dst = row + y * gw;
            if (iy < 0 || iy >= static_cast<long>(ih)) {
              std::fill(dst, dst + gw, T(0));
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(iy) * iw;
            for (std::size_t x = 0; x < gw; ++x) {
              const long ix = static_cast<long>(x * s + j * d) - static_cast<long>(p);
              dst[x] = (ix < 0 || ix >= static_cast<long>(iw)) ? T(0) : src[ix];
            }
          }
        }
  }

  /// Adjoint of gather: image[...] += cols[...].
  template <class T>
  void scatter_add(const T* cols_in, T* image) const {
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const T* row = cols_in + ((c * k + i) * k + j) * cols();
          T* plane = image + c * ih * iw;
          for (std::size_t y = 0; y < gh; ++y) {
            const long iy = static_cast<long>(y * s + i * d) - static_cast<long>(p);
            if (iy < 0 || iy >= static_cast<long>(ih)) continue;
            T* dst = plane + static_cast<std::size_t>(iy) * iw;
            const T* src = row + y * gw;
            for (std::size_t x = 0; x < gw; ++x) {
              const long ix = static_cast<long>(x * s + j * d) - static_cast<long>(p);
              if (ix >= 0 && ix < static_cast<long>(iw)) dst[ix] += src[x];
            }
          }
        }
  }
};

template <class T>
void check_conv_params(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvSpec& spec,
                       bool transpose) {
  spec.validate();
  if (x.rank() != 4) throw ShapeError("conv: input must be N×C×H×W, got " + shape_str(x.shape()));
  if (x.dim(0) == 0) throw ShapeError("conv: empty batch");
  if (x.dim(1) != spec.in_channels)
    throw ShapeError("conv: input has " + std::to_string(x.dim(1)) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  const Shape expected = transpose ? Shape{spec.in_channels, spec.out_channels, spec.kernel, spec.kernel}
                                   : Shape{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
  if (weight.shape() != expected)
    throw ShapeError("conv: weight shape " + shape_str(weight.shape()) + ", expected " + shape_str(expected));
  if (bias.defined() && bias.shape() != Shape{spec.out_channels})
    throw ShapeError("conv: bias shape " + shape_str(bias.shape()) + ", expected [" +
                     std::to_string(spec.out_channels) + "]");
}

}  // namespace detail

/// Cross-correlation with stride, dilation and zero padding.
/// x: N×Cin×H×W, weight: Cout×Cin×k×k, bias: Cout or undefined.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvSpec& spec) {
  detail::check_conv_params(x, weight, bias, spec, false);
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = spec.conv_out(h), wo = spec.conv_out(w);
  const detail::Im2Col geo{spec.in_channels, h, w, ho, wo, spec.kernel, spec.stride, spec.dilation, spec.padding};
  const std::size_t co = spec.out_channels, kk = geo.rows(), hw_in = spec.in_channels * h * w, hw_out = ho * wo;

  std::vector<T> out(n * co * hw_out);
  detail::AlignedVector<T> cols(kk * hw_out), wkeep;
  detail::ConstMatMap<T> wmat(detail::aligned_input(weight.values(), wkeep), co, kk);
  for (std::size_t b = 0; b < n; ++b) {
    geo.gather(x.values().data() + b * hw_in, cols.data());
    detail::MatMap<T> y(out.data() + b * co * hw_out, co, hw_out);
    y.noalias() = wmat * detail::ConstMatMap<T>(cols.data(), kk, hw_out);
    if (bias.defined())
      for (std::size_t c = 0; c < co; ++c) y.row(c).array() += bias[c];
  }

  auto xn = x.node_ptr(), wn = weight.node_ptr(), bn = bias.node_ptr();
  return Tensor<T>::from_op(
      Shape{n, co, ho, wo}, std::move(out), "conv2d", {x, weight, bias},
      [xn, wn, bn, geo, n, co, kk, hw_in, hw_out](Node<T>& node) {
        detail::AlignedVector<T> cols(kk * hw_out), dcols, wkeep, gkeep;
        detail::ConstMatMap<T> wmat(detail::aligned_input(wn->value, wkeep), co, kk);
        const T* grad = detail::aligned_input(node.grad, gkeep);
        for (std::size_t b = 0; b < n; ++b) {
          detail::ConstMatMap<T> dy(grad + b * co * hw_out, co, hw_out);
          if (wn->requires_grad) {
            geo.gather(xn->value.data() + b * hw_in, cols.data());
            detail::MatMap<T> dw(wn->grad_buffer().data(), co, kk);
            dw.noalias() += dy * detail::ConstMatMap<T>(cols.data(), kk, hw_out).transpose();
          }
          if (bn && bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::size_t c = 0; c < co; ++c) g[c] += dy.row(c).sum();
          }
          if (xn->requires_grad) {
            dcols.resize(kk * hw_out);
            detail::MatMap<T>(dcols.data(), kk, hw_out).noalias() = wmat.transpose() * dy;
            geo.scatter_add(dcols.data(), xn->grad_buffer().data() + b * hw_in);
          }
        }
      });
}

/// Transposed convolution (adjoint of conv2d with the same geometry).
/// x: N×Cin×H×W, weight: Cin×Cout×k×k, bias: Cout or undefined.
/// output_padding adds rows/columns at the bottom/right; each component must
/// be smaller than max(stride, dilation).
template <class T>
Tensor<T> transpose_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvSpec& spec,
                           std::array<std::size_t, 2> output_padding = {0, 0}) {
  detail::check_conv_params(x, weight, bias, spec, true);
  for (auto op : output_padding)
    if (op >= std::max(spec.stride, spec.dilation))
      throw ShapeError("transpose conv: output padding must be smaller than stride or dilation");
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = spec.transpose_out(h, output_padding[0]), wo = spec.transpose_out(w, output_padding[1]);
  const std::size_t ci = spec.in_channels, co = spec.out_channels;
  const detail::Im2Col geo{co, ho, wo, h, w, spec.kernel, spec.stride, spec.dilation, spec.padding};
  const std::size_t kk = geo.rows(), hw_in = h * w, out_plane = co * ho * wo;

  std::vector<T> out(n * out_plane, T(0));
  detail::AlignedVector<T> cols(kk * hw_in), wkeep, xkeep;
  detail::ConstMatMap<T> wmat(detail::aligned_input(weight.values(), wkeep), ci, kk);
  const T* xv = detail::aligned_input(x.values(), xkeep);
  for (std::size_t b = 0; b < n; ++b) {
    detail::MatMap<T>(cols.data(), kk, hw_in).noalias() =
        wmat.transpose() * detail::ConstMatMap<T>(xv + b * ci * hw_in, ci, hw_in);
    T* y = out.data() + b * out_plane;
    geo.scatter_add(cols.data(), y);
    if (bias.defined())
      for (std::size_t c = 0; c < co; ++c)
        for (std::size_t i = 0; i < ho * wo; ++i) y[c * ho * wo + i] += bias[c];
  }

  auto xn = x.node_ptr(), wn = weight.node_ptr(), bn = bias.node_ptr();
  return Tensor<T>::from_op(
      Shape{n, co, ho, wo}, std::move(out), "transpose_conv2d", {x, weight, bias},
      [xn, wn, bn, geo, n, ci, co, kk, hw_in, out_plane](Node<T>& node) {
        detail::AlignedVector<T> dcols(kk * hw_in), wkeep, xkeep;
        detail::ConstMatMap<T> wmat(detail::aligned_input(wn->value, wkeep), ci, kk);
        const T* xv = detail::aligned_input(xn->value, xkeep);
        const std::size_t plane = out_plane / co;
        for (std::size_t b = 0; b < n; ++b) {
          const T* dy = node.grad.data() + b * out_plane;
          geo.gather(dy, dcols.data());
          detail::ConstMatMap<T> dc(dcols.data(), kk, hw_in);
          if (xn->requires_grad) {
            detail::MatMap<T> dx(xn->grad_buffer().data() + b * ci * hw_in, ci, hw_in);
            dx.noalias() += wmat * dc;
          }
          if (wn->requires_grad) {
            detail::MatMap<T> dw(wn->grad_buffer().data(), ci, kk);
            dw.noalias() += detail::ConstMatMap<T>(xv + b * ci * hw_in, ci, hw_in) * dc.transpose();
          }
          if (bn && bn->requires_grad) {
            auto& g = bn->grad_buffer();
            for (std::size_t c = 0; c < co; ++c)
              for (std::size_t i = 0; i < plane; ++i) g[c] += dy[c * plane + i];
          }
        }
      });
}

}  // namespace wildfire::ad
