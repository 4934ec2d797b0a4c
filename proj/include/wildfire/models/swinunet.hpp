#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "wildfire/models/model.hpp"

namespace wildfire::models {

struct SwinUNetLiteConfig {
  std::size_t in_channels = 3;
  std::size_t patch = 4;
  std::size_t stage0_channels = 24;
  std::size_t window = 4;
  std::vector<std::size_t> depths = {2, 2, 2};  ///< blocks per encoder stage; the last is the bottleneck
  std::vector<std::size_t> heads = {2, 4, 8};
  std::size_t mlp_ratio = 4;
  std::uint64_t seed = 0;

  std::size_t stages() const { return depths.size(); }
  std::size_t channels(std::size_t stage) const { return stage0_channels << stage; }

  void validate() const {
    detail::require_positive(in_channels, "in_channels");
    detail::require_positive(patch, "patch");
    detail::require_positive(stage0_channels, "stage0_channels");
    detail::require_positive(window, "window");
    detail::require_positive(mlp_ratio, "mlp_ratio");
    if (depths.empty()) throw ConfigError("swin needs at least one stage");
    if (heads.size() != depths.size()) throw ConfigError("swin: one head count per stage is required");
    for (std::size_t s = 0; s < stages(); ++s) {
      detail::require_positive(depths[s], "stage depth");
      detail::require_positive(heads[s], "head count");
      if (channels(s) % heads[s])
        throw ConfigError("swin stage " + std::to_string(s) + ": " + std::to_string(channels(s)) +
                          " channels are not divisible by " + std::to_string(heads[s]) + " heads");
    }
  }

  static SwinUNetLiteConfig from_json(const nlohmann::json& j) {
    SwinUNetLiteConfig c;
    c.in_channels = detail::json_get(j, "in_channels", c.in_channels);
    c.patch = detail::json_get(j, "patch", c.patch);
    c.stage0_channels = detail::json_get(j, "stage0_channels", c.stage0_channels);
    c.window = detail::json_get(j, "window", c.window);
    c.depths = detail::json_get(j, "depths", c.depths);
    c.heads = detail::json_get(j, "heads", c.heads);
    c.mlp_ratio = detail::json_get(j, "mlp_ratio", c.mlp_ratio);
    c.seed = detail::json_get(j, "seed", c.seed);
    c.validate();
    return c;
  }

  nlohmann::json to_json() const {
    return {{"arch", "swinunet_lite"}, {"in_channels", in_channels}, {"patch", patch},
            {"stage0_channels", stage0_channels}, {"window", window}, {"depths", depths},
            {"heads", heads}, {"mlp_ratio", mlp_ratio}, {"seed", seed}};
  }
};

/// Window geometry a block actually uses on a grid×grid map: the configured
/// window, clamped to the grid, with no shift when one window covers it.
struct WindowPlan {
  std::size_t window = 0;
  std::size_t shift = 0;
};

/// Reduced-scale Swin-UNet: patch embedding, stages of shifted-window
/// transformer blocks joined by patch merging, and a symmetric decoder of
/// patch-expanding layers with skip concatenation. Blocks alternate shift 0
/// and shift window/2 within every stage.
template <class T>
class SwinUNetLite : public SegmentationModel<T> {
 public:
  explicit SwinUNetLite(SwinUNetLiteConfig cfg) : SegmentationModel<T>(cfg.seed), cfg_(std::move(cfg)) {
    cfg_.validate();
    auto& ps = this->store_;
    const std::size_t s_count = cfg_.stages(), c0 = cfg_.channels(0);
    patch_embed_ = Conv2d<T>(ps, "patch_embed", ConvSpec{cfg_.in_channels, c0, cfg_.patch, cfg_.patch, 1, 0});
    embed_norm_ = LayerNorm<T>(ps, "patch_embed_norm", c0);
    enc_.resize(s_count);
    for (std::size_t s = 0; s < s_count; ++s) {
      for (std::size_t b = 0; b < cfg_.depths[s]; ++b)
        enc_[s].emplace_back(ps, "enc" + std::to_string(s) + ".block" + std::to_string(b), cfg_.channels(s),
                             cfg_.heads[s], cfg_.mlp_ratio);
      if (s + 1 < s_count) {
        merge_norm_.emplace_back(ps, "merge" + std::to_string(s) + ".norm", 4 * cfg_.channels(s));
        merge_.emplace_back(ps, "merge" + std::to_string(s) + ".reduce", 4 * cfg_.channels(s), cfg_.channels(s + 1));
      }
    }
    dec_.resize(s_count);
    expand_.resize(s_count);
    expand_norm_.resize(s_count);
    fuse_.resize(s_count);
    for (std::size_t s = s_count - 1; s-- > 0;) {
      const std::string p = "dec" + std::to_string(s);
      expand_[s] = Linear<T>(ps, p + ".expand", cfg_.channels(s + 1), 2 * cfg_.channels(s + 1));
      expand_norm_[s] = LayerNorm<T>(ps, p + ".expand_norm", cfg_.channels(s));
      fuse_[s] = Linear<T>(ps, p + ".fuse", 2 * cfg_.channels(s), cfg_.channels(s));
      for (std::size_t b = 0; b < cfg_.depths[s]; ++b)
        dec_[s].emplace_back(ps, p + ".block" + std::to_string(b), cfg_.channels(s), cfg_.heads[s], cfg_.mlp_ratio);
    }
    final_expand_ = Linear<T>(ps, "final_expand", c0, cfg_.patch * cfg_.patch * c0);
    final_norm_ = LayerNorm<T>(ps, "final_norm", c0);
    head_ = Linear<T>(ps, "head", c0, 1);
  }

  std::string arch() const override { return "swinunet_lite"; }
  nlohmann::json config() const override { return cfg_.to_json(); }
  std::size_t in_channels() const override { return cfg_.in_channels; }
  const SwinUNetLiteConfig& swin_config() const { return cfg_; }

  /// Token grid (rows, cols) of every stage for an H×W input.
  std::vector<std::pair<std::size_t, std::size_t>> stage_grids(std::size_t h, std::size_t w) const {
    check_input(h, w);
    std::vector<std::pair<std::size_t, std::size_t>> g;
    std::size_t gh = h / cfg_.patch, gw = w / cfg_.patch;
    for (std::size_t s = 0; s < cfg_.stages(); ++s) {
      g.emplace_back(gh, gw);
      gh /= 2;
      gw /= 2;
    }
    return g;
  }

  /// Configured shift of block b in any stage: 0 for even b, window/2 for odd b.
  std::size_t configured_shift(std::size_t block) const { return block % 2 == 0 ? 0 : cfg_.window / 2; }

  /// Shifts of every encoder block in order (stage-major).
  std::vector<std::size_t> block_shifts() const {
    std::vector<std::size_t> v;
    for (std::size_t s = 0; s < cfg_.stages(); ++s)
      for (std::size_t b = 0; b < cfg_.depths[s]; ++b) v.push_back(configured_shift(b));
    return v;
  }

  WindowPlan window_plan(std::size_t gh, std::size_t gw, std::size_t block) const {
    const std::size_t side = std::min(gh, gw);
    if (side <= cfg_.window) return {side, 0};
    return {cfg_.window, configured_shift(block)};
  }

  void check_input(std::size_t h, std::size_t w) const override {
    auto fail = [&](const std::string& why) {
      throw ShapeError("swinunet_lite: input " + std::to_string(h) + "x" + std::to_string(w) + " " + why);
    };
    if (h == 0 || w == 0 || h % cfg_.patch || w % cfg_.patch) fail("is not divisible by the patch size");
    std::size_t gh = h / cfg_.patch, gw = w / cfg_.patch;
    for (std::size_t s = 0; s < cfg_.stages(); ++s) {
      if (gh != gw && (gh < cfg_.window || gw < cfg_.window)) fail("gives a non-square grid smaller than a window");
      const auto plan = window_plan(gh, gw, 0);
      if (gh % plan.window || gw % plan.window)
        fail("gives a stage-" + std::to_string(s) + " grid " + std::to_string(gh) + "x" + std::to_string(gw) +
             " not divisible by window " + std::to_string(plan.window));
      if (s + 1 < cfg_.stages()) {
        if (gh % 2 || gw % 2) fail("cannot be patch-merged at stage " + std::to_string(s));
        gh /= 2;
        gw /= 2;
      }
    }
  }

  Tensor<T> forward(const Tensor<T>& images, Mode) override {
    this->check_batch(images);
    const std::size_t s_count = cfg_.stages();
    // maps are kept N×C×H×W between stages; blocks work on windowed tokens
    Tensor<T> x = patch_embed_(images);
    x = token_op(x, [&](const Tensor<T>& t) { return embed_norm_(t); });
    std::vector<Tensor<T>> skips;
    for (std::size_t s = 0; s < s_count; ++s) {
      x = run_blocks(enc_[s], x);
      if (s + 1 < s_count) {
        skips.push_back(x);
        auto merged = ad::space_to_depth(x, 2);
        x = token_op(merged, [&](const Tensor<T>& t) { return merge_[s](merge_norm_[s](t)); });
      }
    }
    for (std::size_t s = s_count - 1; s-- > 0;) {
      auto wide = token_op(x, [&](const Tensor<T>& t) { return expand_[s](t); });
      x = ad::depth_to_space(wide, 2);
      x = token_op(x, [&](const Tensor<T>& t) { return expand_norm_[s](t); });
      x = ad::concat_channels<T>({x, skips[s]});
      x = token_op(x, [&](const Tensor<T>& t) { return fuse_[s](t); });
      x = run_blocks(dec_[s], x);
    }
    x = ad::depth_to_space(token_op(x, [&](const Tensor<T>& t) { return final_expand_(t); }), cfg_.patch);
    x = token_op(x, [&](const Tensor<T>& t) { return head_(final_norm_(t)); });
    return ad::sigmoid(x);
  }

 private:
  /// Applies a per-token map to an N×C×H×W feature map.
  template <class F>
  static Tensor<T> token_op(const Tensor<T>& map, F&& f) {
    const std::size_t h = map.dim(2), w = map.dim(3);
    return ad::from_tokens(f(ad::to_tokens(map)), h, w);
  }

  Tensor<T> run_blocks(const std::vector<TransformerBlock<T>>& blocks, Tensor<T> x) const {
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const auto plan = window_plan(h, w, b);
      ad::AttentionMask<T> mask;
      if (plan.shift) {
        mask.values =
            std::make_shared<const std::vector<T>>(ad::shifted_window_mask<T>(h, w, plan.window, plan.shift));
        mask.groups = (h / plan.window) * (w / plan.window);
      }
      auto windows = ad::window_partition(x, plan.window, plan.shift);
      x = ad::window_reverse(blocks[b](windows, mask), n, h, w, plan.window, plan.shift);
    }
    return x;
  }

  SwinUNetLiteConfig cfg_;
  Conv2d<T> patch_embed_;
  LayerNorm<T> embed_norm_;
  std::vector<std::vector<TransformerBlock<T>>> enc_;
  std::vector<LayerNorm<T>> merge_norm_;
  std::vector<Linear<T>> merge_;
  std::vector<std::vector<TransformerBlock<T>>> dec_;
  std::vector<Linear<T>> expand_;
  std::vector<LayerNorm<T>> expand_norm_;
  std::vector<Linear<T>> fuse_;
  Linear<T> final_expand_;
  LayerNorm<T> final_norm_;
  Linear<T> head_;
};

}  // namespace wildfire::models
