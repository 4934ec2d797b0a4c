#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "wildfire/models.hpp"
#include "wildfire/train/dice.hpp"

using namespace wildfire;
using namespace wildfire::models;
using ad::Mode;
using ad::Tensor;

namespace {

template <class T>
Tensor<T> random_images(std::uint64_t seed, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  Rng rng(seed);
  std::vector<T> v(n * c * h * w);
  for (auto& x : v) x = static_cast<T>(rng.uniform());
  return Tensor<T>({n, c, h, w}, std::move(v));
}

template <class T>
void expect_probability_map(const Tensor<T>& y, std::size_t n, std::size_t h, std::size_t w) {
  ASSERT_EQ(y.shape(), (ad::Shape{n, 1, h, w}));
  for (T v : y.data()) {
    ASSERT_GT(v, T(0));
    ASSERT_LT(v, T(1));
  }
}

UNetConfig small_unet(std::size_t base = 4) {
  UNetConfig c;
  c.base_channels = base;
  return c;
}

TransUNetLiteConfig small_transunet() {
  TransUNetLiteConfig c;
  c.base_channels = 4;
  c.embed_dim = 16;
  c.heads = 2;
  c.vit_blocks = 1;
  return c;
}

SwinUNetLiteConfig small_swin() {
  SwinUNetLiteConfig c;
  c.stage0_channels = 8;
  c.depths = {2, 2, 1};
  c.heads = {2, 2, 4};
  return c;
}

// Analytic trainable-parameter count of the UNet layout.
std::size_t unet_count_oracle(std::size_t in, std::size_t b, std::size_t stages) {
  auto block = [](std::size_t ci, std::size_t co) { return 9 * ci * co + 9 * co * co + 4 * co; };
  std::size_t n = 0;
  for (std::size_t i = 0; i < stages; ++i) {
    const std::size_t c = b << i;
    n += block(i == 0 ? in : c, c);
    if (i + 1 < stages) n += 9 * c * (2 * c) + 2 * c;   // down conv + bias
  }
  const std::size_t deep = b << (stages - 1);
  n += block(deep, deep);                                 // bottleneck
  n += block(2 * deep, deep);                             // deepest decoder
  for (std::size_t i = 0; i + 1 < stages; ++i) {
    const std::size_t c = b << i;
    n += 9 * (2 * c) * c + c;                             // transpose conv + bias
    n += block(2 * c, c);
  }
  return n + b + 1;                                       // 1×1 head
}

}  // namespace

// ---------------------------------------------------------------------------
// UNet structure

TEST(UNet, DefaultConfigStructure) {
  UNet<float> net(UNetConfig{});
  EXPECT_EQ(net.encoder_dilations(), (std::vector<std::size_t>{1, 1, 2, 3}));
  EXPECT_EQ(net.encoder_channels(), (std::vector<std::size_t>{16, 32, 64, 128}));
  for (std::size_t s = 0; s < 4; ++s)
    for (const auto& spec : net.encoder_conv_specs(s)) {
      EXPECT_EQ(spec.kernel, 3u);
      EXPECT_EQ(spec.stride, 1u);
      EXPECT_EQ(spec.dilation, spec.padding);
    }
  const auto downs = net.downsample_specs();
  ASSERT_EQ(downs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(downs[i].kernel, 3u);
    EXPECT_EQ(downs[i].stride, 2u);
    EXPECT_EQ(downs[i].out_channels, 2 * downs[i].in_channels);
  }
  const auto ups = net.upsample_specs();
  ASSERT_EQ(ups.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(ups[i].stride, 2u);
    EXPECT_EQ(ups[i].dilation, net.encoder_dilations()[i]);
    EXPECT_EQ(ups[i].in_channels, 2 * ups[i].out_channels);
  }
  EXPECT_EQ(net.decoder_dilations(), (std::vector<std::size_t>{1, 1, 2, 3}));
  EXPECT_EQ(net.bottleneck_spec().dilation, 3u);
  EXPECT_EQ(net.head_spec().kernel, 1u);
}

TEST(UNet, ShapePreservedAcrossSizes) {
  UNet<float> net(small_unet());
  ad::NoGradGuard no_grad;
  for (std::size_t side : {64, 65, 97, 127, 128, 161, 224, 255, 256}) {
    auto y = net.forward(random_images<float>(side, 1, 3, side, side), Mode::Eval);
    expect_probability_map(y, 1, side, side);
  }
  auto y = net.forward(random_images<float>(3, 2, 3, 70, 129), Mode::Train);
  expect_probability_map(y, 2, 70, 129);
}

TEST(UNet, Forward224AtDefaultWidth) {
  UNet<float> net(UNetConfig{});
  ad::NoGradGuard no_grad;
  expect_probability_map(net.forward(random_images<float>(1, 1, 3, 224, 224), Mode::Eval), 1, 224, 224);
}

TEST(UNet, RejectsBadInput) {
  UNet<float> net(small_unet());
  EXPECT_THROW(net.forward(random_images<float>(1, 1, 2, 64, 64), Mode::Eval), ShapeError);
  EXPECT_THROW(net.forward(random_images<float>(1, 1, 3, 3, 64), Mode::Eval), ShapeError);
  UNetConfig bad;
  bad.dilations.clear();
  EXPECT_THROW(UNet<float>{bad}, ConfigError);
}

TEST(UNet, SkipAblationChangesOutput) {
  UNet<double> net(small_unet());
  auto x = random_images<double>(4, 1, 3, 64, 64);
  ad::NoGradGuard no_grad;
  const auto base = net.forward(x, Mode::Eval).values();
  for (std::size_t s = 0; s < 4; ++s) {
    net.set_skip_enabled(s, false);
    const auto ablated = net.forward(x, Mode::Eval).values();
    net.set_skip_enabled(s, true);
    double diff = 0;
    for (std::size_t i = 0; i < base.size(); ++i) diff = std::max(diff, std::abs(base[i] - ablated[i]));
    EXPECT_GT(diff, 1e-9) << "skip " << s;
  }
}

TEST(UNet, ParameterCountMatchesAnalyticOracle) {
  for (std::size_t base : {4, 8, 16}) {
    UNet<float> net(small_unet(base));
    EXPECT_EQ(count_parameters(net), unet_count_oracle(3, base, 4)) << base;
  }
  const double r = double(count_parameters(UNet<float>(small_unet(32)))) / count_parameters(UNet<float>(small_unet(16)));
  EXPECT_NEAR(r, 4.0, 0.2);
  EXPECT_EQ(count_parameters(UNet<float>(small_unet(8))), count_parameters(UNet<float>(small_unet(8))));
}

TEST(UNet, SeededInitIsDeterministic) {
  UNet<double> a(small_unet()), b(small_unet());
  auto cfg = small_unet();
  cfg.seed = 1;
  UNet<double> c(cfg);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].name, b.parameters()[i].name);
    EXPECT_EQ(a.parameters()[i].tensor.values(), b.parameters()[i].tensor.values());
    any_diff = any_diff || a.parameters()[i].tensor.values() != c.parameters()[i].tensor.values();
  }
  EXPECT_TRUE(any_diff);
}

// ---------------------------------------------------------------------------
// other architectures

TEST(PixelLogistic, CountIsFour) {
  PixelLogistic<float> m(PixelLogisticConfig{});
  EXPECT_EQ(count_parameters(m), 4u);
}

TEST(TransUNet, ShapeTokensAndZeroHead) {
  TransUNetLite<float> net(small_transunet());
  EXPECT_EQ(net.token_count(64, 64), 16u);
  ad::NoGradGuard no_grad;
  expect_probability_map(net.forward(random_images<float>(1, 1, 3, 64, 64), Mode::Eval), 1, 64, 64);
  expect_probability_map(net.forward(random_images<float>(2, 2, 3, 96, 128), Mode::Train), 2, 96, 128);
  auto w = net.parameter("head.weight");
  std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0f);
  for (float v : net.forward(random_images<float>(3, 1, 3, 64, 64), Mode::Eval).data()) EXPECT_EQ(v, 0.5f);
  EXPECT_THROW(net.forward(random_images<float>(1, 1, 3, 72, 64), Mode::Eval), ShapeError);
  auto bad = small_transunet();
  bad.heads = 3;
  EXPECT_THROW(TransUNetLite<float>{bad}, ConfigError);
}

TEST(SwinUNet, ShapeGridsAndShifts) {
  SwinUNetLite<float> net(small_swin());
  auto grids = net.stage_grids(64, 64);
  ASSERT_EQ(grids.size(), 3u);
  EXPECT_EQ(grids[0], (std::pair<std::size_t, std::size_t>{16, 16}));
  EXPECT_EQ(grids[2], (std::pair<std::size_t, std::size_t>{4, 4}));
  const auto shifts = net.block_shifts();
  std::size_t block = 0;
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t b = 0; b < net.swin_config().depths[s]; ++b, ++block)
      EXPECT_EQ(shifts[block] == 0, b % 2 == 0);
  EXPECT_EQ(net.configured_shift(1), 2u);
  ad::NoGradGuard no_grad;
  expect_probability_map(net.forward(random_images<float>(1, 1, 3, 64, 64), Mode::Eval), 1, 64, 64);
  EXPECT_THROW(net.forward(random_images<float>(1, 1, 3, 66, 64), Mode::Eval), ShapeError);
  EXPECT_THROW(net.forward(random_images<float>(1, 1, 3, 40, 40), Mode::Eval), ShapeError);
}

TEST(SwinUNet, PaperStageZeroWidth) {
  SwinUNetLiteConfig cfg;
  cfg.stage0_channels = 96;
  cfg.heads = {3, 6, 12};
  SwinUNetLite<float> net(cfg);
  EXPECT_EQ(net.parameter("patch_embed.weight").shape(), (ad::Shape{96, 3, 4, 4}));
}

// ---------------------------------------------------------------------------
// factory and descent

TEST(Factory, BuildsEveryArchFromItsConfig) {
  for (nlohmann::json cfg : {small_unet().to_json(), small_transunet().to_json(), small_swin().to_json(),
                             PixelLogisticConfig{}.to_json()}) {
    auto m = make_model<float>(cfg);
    EXPECT_EQ(m->arch(), cfg["arch"]);
    EXPECT_EQ(m->config(), cfg);
  }
  EXPECT_THROW(make_model<float>({{"arch", "mask2former"}}), ConfigError);
  EXPECT_THROW(make_model<float>({{"base_channels", 4}}), ConfigError);
  EXPECT_THROW(make_model<float>({{"arch", "unet"}, {"base_channels", "wide"}}), ConfigError);
}

TEST(Descent, OneSmallStepLowersDiceLoss) {
  for (nlohmann::json cfg : {small_unet().to_json(), small_transunet().to_json(), small_swin().to_json()}) {
    auto m = make_model<double>(cfg);
    auto x = random_images<double>(5, 1, 3, 64, 64);
    Rng rng(6);
    Tensor<double> target({1, 1, 64, 64}, std::vector<double>(64 * 64));
    for (std::size_t r = 20; r < 40; ++r)
      for (std::size_t c = 10; c < 30; ++c) target.mutable_data()[r * 64 + c] = 1.0;
    // Eval mode keeps batch-norm statistics fixed so the two losses compare like for like.
    auto loss = train::dice_loss(m->forward(x, Mode::Eval), target);
    const double before = loss.item();
    ASSERT_TRUE(std::isfinite(before));
    ad::backward(loss);
    double sq = 0;
    for (auto& p : m->trainable_parameters())
      for (double g : p.grad()) sq += g * g;
    const double lr = 1e-3 / std::sqrt(sq);
    for (auto& p : m->trainable_parameters()) {
      auto d = p.mutable_data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * p.grad()[i];
    }
    ad::NoGradGuard no_grad;
    EXPECT_LT(train::dice_loss(m->forward(x, Mode::Eval), target).item(), before) << cfg["arch"];
  }
}
