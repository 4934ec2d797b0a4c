#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "wildfire/models/model.hpp"

namespace wildfire::models {

struct UNetConfig {
  std::size_t in_channels = 3;
  std::size_t base_channels = 16;
  std::vector<std::size_t> dilations = {1, 1, 2, 3};  ///< one per stage
  std::size_t out_channels = 1;
  std::uint64_t seed = 0;

  std::size_t stages() const { return dilations.size(); }

  void validate() const {
    detail::require_positive(in_channels, "in_channels");
    detail::require_positive(base_channels, "base_channels");
    detail::require_positive(out_channels, "out_channels");
    if (dilations.empty()) throw ConfigError("UNet needs at least one stage");
    for (auto d : dilations) detail::require_positive(d, "dilation");
  }

  static UNetConfig from_json(const nlohmann::json& j) {
    UNetConfig c;
    c.in_channels = detail::json_get(j, "in_channels", c.in_channels);
    c.base_channels = detail::json_get(j, "base_channels", c.base_channels);
    c.dilations = detail::json_get(j, "dilations", c.dilations);
    c.out_channels = detail::json_get(j, "out_channels", c.out_channels);
    c.seed = detail::json_get(j, "seed", c.seed);
    if (j.contains("stages") && j.at("stages").get<std::size_t>() != c.dilations.size())
      throw ConfigError("UNet 'stages' must equal the number of dilations");
    c.validate();
    return c;
  }

  nlohmann::json to_json() const {
    return {{"arch", "unet"},           {"in_channels", in_channels}, {"base_channels", base_channels},
            {"stages", stages()},       {"dilations", dilations},     {"out_channels", out_channels},
            {"seed", seed}};
  }
};

/// Dilated/strided UNet.
///
/// Encoder stage i runs [conv k3 (dilation d_i) + BN + ReLU] x2 at
/// base·2^i channels; a stride-2 k3 convolution then halves the resolution
/// and doubles the channels for the next stage. The deepest stage feeds a
/// dilated bottleneck block. The decoder mirrors the encoder: the deepest
/// decoder block fuses bottleneck and stage features; every other decoder
/// stage upsamples with a stride-2 transpose convolution using the stage's
/// dilation, concatenates the encoder skip and fuses with a conv block.
/// A 1×1 convolution and sigmoid produce the probability map.
template <class T>
class UNet : public SegmentationModel<T> {
 public:
  explicit UNet(UNetConfig cfg) : SegmentationModel<T>(cfg.seed), cfg_(std::move(cfg)) {
    cfg_.validate();
    auto& ps = this->store_;
    const std::size_t s = cfg_.stages();
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t in = i == 0 ? cfg_.in_channels : channels(i);
      enc_.emplace_back(ps, "enc" + std::to_string(i), in, channels(i), cfg_.dilations[i]);
      if (i + 1 < s)
        down_.emplace_back(ps, "down" + std::to_string(i), ConvSpec{channels(i), channels(i + 1), 3, 2, 1, 1});
    }
    bottleneck_ = ConvBlock<T>(ps, "bottleneck", channels(s - 1), channels(s - 1), cfg_.dilations[s - 1]);
    dec_.resize(s);
    up_.resize(s);
    dec_[s - 1] = ConvBlock<T>(ps, "dec" + std::to_string(s - 1), 2 * channels(s - 1), channels(s - 1),
                               cfg_.dilations[s - 1]);
    for (std::size_t i = s - 1; i-- > 0;) {
      const std::size_t d = cfg_.dilations[i];
      up_[i] = TransposeConv2d<T>(ps, "up" + std::to_string(i), ConvSpec{channels(i + 1), channels(i), 3, 2, d, d});
      dec_[i] = ConvBlock<T>(ps, "dec" + std::to_string(i), 2 * channels(i), channels(i), d);
    }
    head_ = Conv2d<T>(ps, "head", ConvSpec{channels(0), cfg_.out_channels, 1, 1, 1, 0});
    skip_enabled_.assign(s, true);
  }

  std::string arch() const override { return "unet"; }
  nlohmann::json config() const override { return cfg_.to_json(); }
  std::size_t in_channels() const override { return cfg_.in_channels; }
  const UNetConfig& unet_config() const { return cfg_; }

  void check_input(std::size_t h, std::size_t w) const override {
    // Every encoder stage must keep at least one pixel.
    std::size_t hh = h, ww = w;
    for (std::size_t i = 0; i + 1 < cfg_.stages(); ++i) {
      if (hh < 2 || ww < 2)
        throw ShapeError("UNet: input " + std::to_string(h) + "x" + std::to_string(w) + " is too small for " +
                         std::to_string(cfg_.stages()) + " stages");
      hh = (hh + 1) / 2;
      ww = (ww + 1) / 2;
    }
    if (h == 0 || w == 0) throw ShapeError("UNet: empty input");
  }

  Tensor<T> forward(const Tensor<T>& images, Mode mode) override {
    this->check_batch(images);
    const std::size_t s = cfg_.stages();
    std::vector<Tensor<T>> skips(s);
    Tensor<T> x = images;
    for (std::size_t i = 0; i < s; ++i) {
      x = enc_[i](x, mode);
      skips[i] = x;
      if (i + 1 < s) x = down_[i](x);
    }
    x = bottleneck_(x, mode);
    x = dec_[s - 1](ad::concat_channels<T>({x, skip(s - 1, skips[s - 1])}), mode);
    for (std::size_t i = s - 1; i-- > 0;) {
      x = up_[i](x, skips[i].dim(2), skips[i].dim(3));
      x = dec_[i](ad::concat_channels<T>({x, skip(i, skips[i])}), mode);
    }
    return ad::sigmoid(head_(x));
  }

  // --- structural introspection -------------------------------------------

  /// Channels of encoder stage i: base·2^i.
  std::size_t channels(std::size_t i) const { return cfg_.base_channels << i; }
  std::vector<std::size_t> encoder_channels() const {
    std::vector<std::size_t> v;
    for (std::size_t i = 0; i < cfg_.stages(); ++i) v.push_back(enc_[i].conv2.spec.out_channels);
    return v;
  }
  /// Dilation of both convolutions of each encoder block.
  std::vector<std::size_t> encoder_dilations() const {
    std::vector<std::size_t> v;
    for (const auto& b : enc_) {
      if (b.conv1.spec.dilation != b.conv2.spec.dilation) throw Error("inconsistent block dilation");
      v.push_back(b.conv1.spec.dilation);
    }
    return v;
  }
  std::vector<ConvSpec> encoder_conv_specs(std::size_t stage) const {
    return {enc_.at(stage).conv1.spec, enc_.at(stage).conv2.spec};
  }
  std::vector<ConvSpec> downsample_specs() const {
    std::vector<ConvSpec> v;
    for (const auto& d : down_) v.push_back(d.spec);
    return v;
  }
  /// Transpose convolutions, shallowest stage first.
  std::vector<ConvSpec> upsample_specs() const {
    std::vector<ConvSpec> v;
    for (std::size_t i = 0; i + 1 < cfg_.stages(); ++i) v.push_back(up_[i].spec);
    return v;
  }
  std::vector<std::size_t> decoder_dilations() const {
    std::vector<std::size_t> v;
    for (const auto& b : dec_) v.push_back(b.dilation);
    return v;
  }
  ConvSpec bottleneck_spec() const { return bottleneck_.conv1.spec; }
  ConvSpec head_spec() const { return head_.spec; }

  /// Ablation switch: a disabled skip feeds zeros in place of the encoder
  /// features (channel layout unchanged).
  void set_skip_enabled(std::size_t stage, bool on) { skip_enabled_.at(stage) = on; }
  bool skip_enabled(std::size_t stage) const { return skip_enabled_.at(stage); }

 private:
  Tensor<T> skip(std::size_t i, const Tensor<T>& features) const {
    if (skip_enabled_[i]) return features;
    return Tensor<T>(features.shape(), T(0));
  }

  UNetConfig cfg_;
  std::vector<ConvBlock<T>> enc_;
  std::vector<Conv2d<T>> down_;
  ConvBlock<T> bottleneck_;
  std::vector<ConvBlock<T>> dec_;
  std::vector<TransposeConv2d<T>> up_;
  Conv2d<T> head_;
  std::vector<bool> skip_enabled_;
};

}  // namespace wildfire::models
