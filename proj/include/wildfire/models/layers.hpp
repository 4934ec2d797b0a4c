#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "wildfire/autodiff.hpp"
#include "wildfire/rng.hpp"

namespace wildfire::models {

using ad::ConvSpec;
using ad::Mode;
using ad::Shape;
using ad::Tensor;

/// A tensor owned by a model. Buffers (batch-norm running statistics) are
/// saved with the model but never optimised.
template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

/// Ordered registry of a model's tensors plus the seeded initialiser that
/// fills them. Registration order fixes both the random draws and the
/// checkpoint layout.
template <class T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  /// Uniform in [-bound, bound].
  Tensor<T> uniform(const std::string& name, Shape shape, double bound) {
    std::vector<T> v(ad::numel(shape));
    for (auto& x : v) x = static_cast<T>(rng_.uniform(-bound, bound));
    return add(name, Tensor<T>(std::move(shape), std::move(v), true), true);
  }

  Tensor<T> constant(const std::string& name, Shape shape, T value, bool trainable = true) {
    return add(name, Tensor<T>(std::move(shape), value, trainable), trainable);
  }

  Tensor<T> add(const std::string& name, Tensor<T> t, bool trainable) {
    for (const auto& p : items_)
      if (p.name == name) throw ConfigError("duplicate parameter name: " + name);
    items_.push_back({name, t, trainable});
    return t;
  }

  std::vector<NamedTensor<T>>& items() { return items_; }
  const std::vector<NamedTensor<T>>& items() const { return items_; }

 private:
  Rng rng_;
  std::vector<NamedTensor<T>> items_;
};

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <class T>
struct Conv2d {
  ConvSpec spec;
  Tensor<T> weight;
  Tensor<T> bias;  ///< undefined when built without bias

  Conv2d() = default;
  Conv2d(ParamStore<T>& ps, const std::string& name, ConvSpec s, bool with_bias = true) : spec(s) {
    spec.validate();
    const double fan_in = static_cast<double>(s.in_channels * s.kernel * s.kernel);
    weight = ps.uniform(join(name, "weight"), {s.out_channels, s.in_channels, s.kernel, s.kernel},
                        std::sqrt(6.0 / fan_in));
    if (with_bias) bias = ps.constant(join(name, "bias"), {s.out_channels}, T(0));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return ad::conv2d(x, weight, bias, spec); }
};

/// Learned upsampling. Output padding is chosen per call so the result
/// matches a requested size (the size of the skip it will be joined with).
template <class T>
struct TransposeConv2d {
  ConvSpec spec;
  Tensor<T> weight;
  Tensor<T> bias;

  TransposeConv2d() = default;
  TransposeConv2d(ParamStore<T>& ps, const std::string& name, ConvSpec s) : spec(s) {
    spec.validate();
    const double fan_in = static_cast<double>(s.in_channels * s.kernel * s.kernel);
    weight = ps.uniform(join(name, "weight"), {s.in_channels, s.out_channels, s.kernel, s.kernel},
                        std::sqrt(6.0 / fan_in));
    bias = ps.constant(join(name, "bias"), {s.out_channels}, T(0));
  }

  /// Output padding that turns an `in`-sized input into `target`.
  std::size_t padding_for(std::size_t in, std::size_t target) const {
    const std::size_t base = spec.transpose_out(in, 0);
    if (target < base || target - base >= std::max(spec.stride, spec.dilation))
      throw ShapeError("transpose conv cannot map size " + std::to_string(in) + " to " + std::to_string(target));
    return target - base;
  }

  Tensor<T> operator()(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) const {
    return ad::transpose_conv2d(x, weight, bias, spec, {padding_for(x.dim(2), out_h), padding_for(x.dim(3), out_w)});
  }
};

template <class T>
struct BatchNorm2d {
  Tensor<T> gamma, beta;
  ad::BatchNormState<T> state;

  BatchNorm2d() = default;
  BatchNorm2d(ParamStore<T>& ps, const std::string& name, std::size_t channels) : state(channels) {
    gamma = ps.constant(join(name, "weight"), {channels}, T(1));
    beta = ps.constant(join(name, "bias"), {channels}, T(0));
    ps.add(join(name, "running_mean"), state.running_mean, false);
    ps.add(join(name, "running_var"), state.running_var, false);
  }
  Tensor<T> operator()(const Tensor<T>& x, Mode mode) { return ad::batch_norm2d(x, gamma, beta, state, mode); }
};

template <class T>
struct LayerNorm {
  Tensor<T> gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, const std::string& name, std::size_t features) {
    gamma = ps.constant(join(name, "weight"), {features}, T(1));
    beta = ps.constant(join(name, "bias"), {features}, T(0));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return ad::layer_norm(x, gamma, beta); }
};

template <class T>
struct Linear {
  Tensor<T> weight, bias;

  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, std::size_t in, std::size_t out) {
    weight = ps.uniform(join(name, "weight"), {out, in}, std::sqrt(3.0 / static_cast<double>(in)));
    bias = ps.constant(join(name, "bias"), {out}, T(0));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return ad::linear(x, weight, bias); }
};

/// conv(k3, dilation d, padding d) + BN + ReLU, twice. Spatial size is kept.
template <class T>
struct ConvBlock {
  Conv2d<T> conv1, conv2;
  BatchNorm2d<T> bn1, bn2;
  std::size_t dilation = 1;

  ConvBlock() = default;
  ConvBlock(ParamStore<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t d)
      : dilation(d) {
    conv1 = Conv2d<T>(ps, join(name, "conv1"), ConvSpec{in, out, 3, 1, d, d}, false);
    bn1 = BatchNorm2d<T>(ps, join(name, "bn1"), out);
    conv2 = Conv2d<T>(ps, join(name, "conv2"), ConvSpec{out, out, 3, 1, d, d}, false);
    bn2 = BatchNorm2d<T>(ps, join(name, "bn2"), out);
  }
  Tensor<T> operator()(const Tensor<T>& x, Mode mode) {
    auto h = ad::relu(bn1(conv1(x), mode));
    return ad::relu(bn2(conv2(h), mode));
  }
};

/// Pre-norm transformer block: x + MHSA(LN(x)), then x + MLP(LN(x)) with a
/// GELU hidden layer.
template <class T>
struct TransformerBlock {
  LayerNorm<T> norm1, norm2;
  ad::AttentionParams<T> attn;
  Linear<T> fc1, fc2;
  std::size_t heads = 1;

  TransformerBlock() = default;
  TransformerBlock(ParamStore<T>& ps, const std::string& name, std::size_t dim, std::size_t h, std::size_t mlp_ratio)
      : heads(h) {
    if (h == 0 || dim % h)
      throw ConfigError("embedding " + std::to_string(dim) + " is not divisible by " + std::to_string(h) + " heads");
    norm1 = LayerNorm<T>(ps, join(name, "norm1"), dim);
    Linear<T> qkv(ps, join(name, "attn.qkv"), dim, 3 * dim);
    Linear<T> proj(ps, join(name, "attn.proj"), dim, dim);
    attn = {qkv.weight, qkv.bias, proj.weight, proj.bias};
    norm2 = LayerNorm<T>(ps, join(name, "norm2"), dim);
    fc1 = Linear<T>(ps, join(name, "mlp.fc1"), dim, dim * mlp_ratio);
    fc2 = Linear<T>(ps, join(name, "mlp.fc2"), dim * mlp_ratio, dim);
  }

  /// tokens: N×T×E.
  Tensor<T> operator()(const Tensor<T>& tokens, const ad::AttentionMask<T>& mask = {}) const {
    auto x = ad::add(tokens, ad::multi_head_self_attention(norm1(tokens), attn, heads, mask));
    return ad::add(x, fc2(ad::gelu(fc1(norm2(x)))));
  }
};

}  // namespace wildfire::models
