#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "wildfire/models/model.hpp"

namespace wildfire::models {

struct TransUNetLiteConfig {
  std::size_t in_channels = 3;
  std::size_t base_channels = 16;  ///< CNN stem width at full resolution
  std::size_t cnn_stem = 4;        ///< stride-2 downsamples before tokenisation
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t vit_blocks = 2;
  std::size_t mlp_ratio = 4;
  std::size_t token_grid = 4;  ///< side of the learned positional-embedding grid
  std::uint64_t seed = 0;

  std::size_t stride() const { return std::size_t{1} << cnn_stem; }

  void validate() const {
    detail::require_positive(in_channels, "in_channels");
    detail::require_positive(base_channels, "base_channels");
    detail::require_positive(cnn_stem, "cnn_stem");
    detail::require_positive(embed_dim, "embed_dim");
    detail::require_positive(heads, "heads");
    detail::require_positive(mlp_ratio, "mlp_ratio");
    detail::require_positive(token_grid, "token_grid");
    if (embed_dim % heads) throw ConfigError("embed_dim must be divisible by heads");
    if (cnn_stem > 8) throw ConfigError("cnn_stem deeper than 8 is not supported");
  }

  static TransUNetLiteConfig from_json(const nlohmann::json& j) {
    TransUNetLiteConfig c;
    c.in_channels = detail::json_get(j, "in_channels", c.in_channels);
    c.base_channels = detail::json_get(j, "base_channels", c.base_channels);
    c.cnn_stem = detail::json_get(j, "cnn_stem", c.cnn_stem);
    c.embed_dim = detail::json_get(j, "embed_dim", c.embed_dim);
    c.heads = detail::json_get(j, "heads", c.heads);
    c.vit_blocks = detail::json_get(j, "vit_blocks", c.vit_blocks);
    c.mlp_ratio = detail::json_get(j, "mlp_ratio", c.mlp_ratio);
    c.token_grid = detail::json_get(j, "token_grid", c.token_grid);
    c.seed = detail::json_get(j, "seed", c.seed);
    c.validate();
    return c;
  }

  nlohmann::json to_json() const {
    return {{"arch", "transunet_lite"}, {"in_channels", in_channels}, {"base_channels", base_channels},
            {"cnn_stem", cnn_stem},     {"embed_dim", embed_dim},     {"heads", heads},
            {"vit_blocks", vit_blocks}, {"mlp_ratio", mlp_ratio},     {"token_grid", token_grid},
            {"seed", seed}};
  }
};

/// Reduced-scale TransUNet: a CNN stem of conv blocks and stride-2
/// downsamples, a ViT encoder over the deepest feature map (one token per
/// pixel of that map plus a learned positional embedding) and a CNN decoder
/// with transpose-conv upsampling and skip concatenation.
template <class T>
class TransUNetLite : public SegmentationModel<T> {
 public:
  explicit TransUNetLite(TransUNetLiteConfig cfg) : SegmentationModel<T>(cfg.seed), cfg_(cfg) {
    cfg_.validate();
    auto& ps = this->store_;
    const std::size_t depth = cfg_.cnn_stem;
    for (std::size_t i = 0; i < depth; ++i) {
      const std::size_t in = i == 0 ? cfg_.in_channels : channels(i);
      stem_.emplace_back(ps, "stem" + std::to_string(i), in, channels(i), 1);
      down_.emplace_back(ps, "down" + std::to_string(i), ConvSpec{channels(i), channels(i + 1), 3, 2, 1, 1});
    }
    embed_ = Conv2d<T>(ps, "embed", ConvSpec{channels(depth), cfg_.embed_dim, 1, 1, 1, 0});
    pos_ = ps.uniform("pos_embed", {1, cfg_.token_grid * cfg_.token_grid, cfg_.embed_dim}, 0.02);
    for (std::size_t b = 0; b < cfg_.vit_blocks; ++b)
      blocks_.emplace_back(ps, "vit" + std::to_string(b), cfg_.embed_dim, cfg_.heads, cfg_.mlp_ratio);
    norm_ = LayerNorm<T>(ps, "vit_norm", cfg_.embed_dim);
    neck_ = ConvBlock<T>(ps, "neck", cfg_.embed_dim, channels(depth), 1);
    up_.resize(depth);
    dec_.resize(depth);
    for (std::size_t i = depth; i-- > 0;) {
      up_[i] = TransposeConv2d<T>(ps, "up" + std::to_string(i), ConvSpec{channels(i + 1), channels(i), 3, 2, 1, 1});
      dec_[i] = ConvBlock<T>(ps, "dec" + std::to_string(i), 2 * channels(i), channels(i), 1);
    }
    head_ = Conv2d<T>(ps, "head", ConvSpec{channels(0), 1, 1, 1, 1, 0});
  }

  std::string arch() const override { return "transunet_lite"; }
  nlohmann::json config() const override { return cfg_.to_json(); }
  std::size_t in_channels() const override { return cfg_.in_channels; }
  std::size_t channels(std::size_t i) const { return cfg_.base_channels << i; }

  void check_input(std::size_t h, std::size_t w) const override {
    const std::size_t s = cfg_.stride();
    if (h == 0 || w == 0 || h % s || w % s)
      throw ShapeError("transunet_lite: input " + std::to_string(h) + "x" + std::to_string(w) +
                       " does not give an integer token grid at stride " + std::to_string(s));
  }

  /// Tokens seen by the ViT encoder for an H×W input.
  std::size_t token_count(std::size_t h, std::size_t w) const {
    check_input(h, w);
    return (h / cfg_.stride()) * (w / cfg_.stride());
  }

  Tensor<T> forward(const Tensor<T>& images, Mode mode) override {
    this->check_batch(images);
    std::vector<Tensor<T>> skips;
    Tensor<T> x = images;
    for (std::size_t i = 0; i < cfg_.cnn_stem; ++i) {
      x = stem_[i](x, mode);
      skips.push_back(x);
      x = down_[i](x);
    }
    x = embed_(x);
    const std::size_t gh = x.dim(2), gw = x.dim(3);
    auto tokens = ad::add_broadcast_batch(ad::to_tokens(x), positional(gh, gw));
    for (const auto& block : blocks_) tokens = block(tokens);
    x = neck_(ad::from_tokens(norm_(tokens), gh, gw), mode);
    for (std::size_t i = cfg_.cnn_stem; i-- > 0;) {
      x = up_[i](x, skips[i].dim(2), skips[i].dim(3));
      x = dec_[i](ad::concat_channels<T>({x, skips[i]}), mode);
    }
    return ad::sigmoid(head_(x));
  }

 private:
  /// Positional embedding for a gh×gw grid: the learned grid itself when the
  /// sizes match, otherwise a nearest-neighbour resampling of it.
  Tensor<T> positional(std::size_t gh, std::size_t gw) const {
    const std::size_t g = cfg_.token_grid, e = cfg_.embed_dim;
    if (gh == g && gw == g) return pos_;
    auto idx = std::make_shared<std::vector<std::size_t>>(gh * gw * e);
    for (std::size_t r = 0; r < gh; ++r)
      for (std::size_t c = 0; c < gw; ++c) {
        const std::size_t sr = r * g / gh, sc = c * g / gw;
        for (std::size_t k = 0; k < e; ++k) (*idx)[(r * gw + c) * e + k] = (sr * g + sc) * e + k;
      }
    return ad::gather(pos_, Shape{1, gh * gw, e}, std::move(idx), "pos_resample");
  }

  TransUNetLiteConfig cfg_;
  std::vector<ConvBlock<T>> stem_;
  std::vector<Conv2d<T>> down_;
  Conv2d<T> embed_;
  Tensor<T> pos_;
  std::vector<TransformerBlock<T>> blocks_;
  LayerNorm<T> norm_;
  ConvBlock<T> neck_;
  std::vector<TransposeConv2d<T>> up_;
  std::vector<ConvBlock<T>> dec_;
  Conv2d<T> head_;
};

}  // namespace wildfire::models
