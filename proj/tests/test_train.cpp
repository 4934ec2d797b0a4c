#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "wildfire/models.hpp"
#include "wildfire/synthetic.hpp"
#include "wildfire/train.hpp"

using namespace wildfire;
using namespace wildfire::train;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("wildfire_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor<double> leaf(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>({n}, std::move(v), true);
}

void set_grad(Tensor<double>& t, const std::vector<double>& g) {
  auto buf = t.mutable_grad();
  std::copy(g.begin(), g.end(), buf.begin());
}

models::UNetConfig tiny_unet() {
  models::UNetConfig c;
  c.base_channels = 2;
  c.dilations = {1, 2};
  return c;
}

TrainConfig tiny_run(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 3;
  c.schedule.peak_lr = 5e-3;
  c.augment.crop = 12;
  c.seed = 11;
  return c;
}

std::vector<PatchSample> tiny_samples(std::size_t n, std::uint64_t seed) {
  synthetic::SceneConfig sc;
  sc.min_radius = 1.5;
  sc.max_radius = 3.0;
  sc.p_empty = 0.0;
  return synthetic::make_samples(n, 16, seed, sc);
}

}  // namespace

// ---------------------------------------------------------------------------
// dice loss

TEST(Dice, PerfectOverlapIsZero) {
  Tensor<double> t({1, 1, 2, 2}, std::vector<double>{1, 0, 0, 1});
  EXPECT_NEAR(dice_loss(t, t, 1e-12).item(), 0.0, 1e-12);
}

TEST(Dice, HalfOnesAgainstHalfProbability) {
  const std::size_t n = 64;
  std::vector<double> target(n, 0.0);
  for (std::size_t i = 0; i < n / 2; ++i) target[2 * i] = 1.0;
  Tensor<double> p({1, 1, 8, 8}, 0.5), t({1, 1, 8, 8}, target);
  EXPECT_NEAR(dice_loss(p, t, 1e-12).item(), 0.5, 1e-12);
}

TEST(Dice, MatchesFormulaOracleAndStaysInUnitInterval) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = oracle::random_vector(rng, 2 * 64, 0.01, 0.99);
    std::vector<double> t(2 * 64);
    for (auto& x : t) x = rng.bernoulli(0.3) ? 1.0 : 0.0;
    const double got = dice_loss(Tensor<double>({2, 1, 8, 8}, p), Tensor<double>({2, 1, 8, 8}, t)).item();
    EXPECT_NEAR(got, oracle::dice_loss(p, t, 2, 1.0), 1e-12);
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 1.0);
  }
}

TEST(Dice, ShapeMismatchThrows) {
  EXPECT_THROW(dice_loss(Tensor<double>({1, 1, 2, 2}), Tensor<double>({1, 1, 2, 3})), ShapeError);
}

// ---------------------------------------------------------------------------
// AdamW

TEST(AdamW, ZeroGradientWithoutDecayIsFixedPoint) {
  auto p = leaf({0.5, -2.0, 3.0});
  set_grad(p, {0, 0, 0});
  AdamW<double> opt({p}, {0.9, 0.999, 1e-8, 0.0});
  opt.step(0.1);
  EXPECT_EQ(p.values(), (std::vector<double>{0.5, -2.0, 3.0}));
}

TEST(AdamW, ZeroGradientDecayScalesByOneMinusLrWd) {
  auto p = leaf({0.5, -2.0, 3.0});
  set_grad(p, {0, 0, 0});
  AdamW<double> opt({p}, {0.9, 0.999, 1e-8, 0.01});
  opt.step(0.1);
  const std::vector<double> start{0.5, -2.0, 3.0};
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p[i], start[i] * 0.999, 1e-15);
}

TEST(AdamW, SingleParameterFirstStep) {
  auto p = leaf({1.0});
  set_grad(p, {1.0});
  AdamW<double> opt({p}, {0.9, 0.999, 1e-8, 0.0});
  opt.step(0.1);
  oracle::ScalarAdamW ref;
  EXPECT_NEAR(p[0], ref.step(1.0, 1.0, 0.1, 0.9, 0.999, 1e-8, 0.0), 1e-12);
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 1.0 / (1.0 + 1e-8), 1e-12);
}

TEST(AdamW, MatchesScalarReferenceStateForState) {
  for (double wd : {0.0, 0.01}) {
    Rng rng(21);
    auto a = leaf(oracle::random_vector(rng, 7)), b = leaf(oracle::random_vector(rng, 5));
    std::vector<double> ref_p(a.values());
    ref_p.insert(ref_p.end(), b.values().begin(), b.values().end());
    std::vector<oracle::ScalarAdamW> ref(ref_p.size());
    AdamW<double> opt({a, b}, {0.9, 0.999, 1e-8, wd});
    for (int step = 0; step < 100; ++step) {
      const auto g = oracle::random_vector(rng, 12, -2.0, 2.0);
      set_grad(a, {g.begin(), g.begin() + 7});
      set_grad(b, {g.begin() + 7, g.end()});
      const double lr = 1e-3 * (1 + step % 7);
      opt.step(lr);
      for (std::size_t k = 0; k < 12; ++k) ref_p[k] = ref[k].step(ref_p[k], g[k], lr, 0.9, 0.999, 1e-8, wd);
      for (std::size_t k = 0; k < 12; ++k) {
        const std::size_t t = k < 7 ? 0 : 1, i = k < 7 ? k : k - 7;
        ASSERT_NEAR((t ? b : a)[i], ref_p[k], 1e-12);
        ASSERT_NEAR(opt.state().m[t][i], ref[k].m, 1e-12);
        ASSERT_NEAR(opt.state().v[t][i], ref[k].v, 1e-12);
      }
      ASSERT_EQ(opt.state().step, static_cast<std::uint64_t>(step + 1));
    }
  }
}

TEST(AdamW, MissingGradientThrows) {
  auto p = leaf({1.0});
  AdamW<double> opt({p}, {});
  EXPECT_THROW(opt.step(0.1), Error);
  EXPECT_THROW((AdamW<double>({p}, {1.0, 0.999, 1e-8, 0.0})), ConfigError);
}

// ---------------------------------------------------------------------------
// one-cycle schedule

TEST(OneCycle, PeakAtWarmupBoundaryAndEndpoints) {
  OneCycleConfig cfg;
  const std::uint64_t total = 1000;
  const auto w = warmup_end(total, cfg);
  EXPECT_EQ(w, 300u);
  EXPECT_EQ(one_cycle_lr(w, total, cfg), 1e-3);
  EXPECT_NEAR(one_cycle_lr(0, total, cfg), 4e-5, 1e-18);
  EXPECT_NEAR(one_cycle_lr(total - 1, total, cfg), 1e-7, 1e-20);
}

TEST(OneCycle, UnimodalWithSinglePeakForEveryLength) {
  OneCycleConfig cfg;
  for (std::uint64_t total = 1; total <= 400; ++total) {
    std::size_t peaks = 0;
    const auto w = warmup_end(total, cfg);
    double prev = 0;
    for (std::uint64_t s = 0; s < total; ++s) {
      const double lr = one_cycle_lr(s, total, cfg);
      ASSERT_GT(lr, 0.0);
      ASSERT_LE(lr, 1e-3);
      if (lr == 1e-3) ++peaks;
      if (s > 0 && s <= w) {
        ASSERT_GT(lr, prev) << total << " " << s;
      }
      if (s > w) {
        ASSERT_LT(lr, prev) << total << " " << s;
      }
      prev = lr;
    }
    ASSERT_EQ(peaks, 1u) << total;
    ASSERT_EQ(one_cycle_lr(w, total, cfg), 1e-3);
  }
}

TEST(OneCycle, OutOfRangeAndBadConfig) {
  OneCycleConfig cfg;
  EXPECT_THROW(one_cycle_lr(10, 10, cfg), ConfigError);
  EXPECT_THROW(one_cycle_lr(0, 0, cfg), ConfigError);
  cfg.warmup_fraction = 1.0;
  EXPECT_THROW(one_cycle_lr(0, 10, cfg), ConfigError);
}

TEST(OneCycle, InitialAnchorStartsAtConfiguredRate) {
  TrainConfig c;
  c.lr_anchor = "initial";
  EXPECT_NEAR(one_cycle_lr(0, 100, c.effective_schedule()), 1e-3, 1e-18);
  EXPECT_NEAR(c.effective_schedule().peak_lr, 25e-3, 1e-18);
}

TEST(TrainConfigJson, RoundTripAndErrors) {
  TrainConfig c = tiny_run(7);
  c.optimizer.beta1 = 0.8;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(train_config_from_json({{"warmup_fraction", 0.0}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"betas", {0.9}}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"epochs", "many"}}), ConfigError);
}

// ---------------------------------------------------------------------------
// checkpoints

TEST(Checkpoint, SaveLoadIsBitIdentical) {
  const auto dir = scratch("roundtrip");
  models::UNet<double> net(tiny_unet());
  auto ck = snapshot(net);
  ck.history = {{1, 0.5, std::nan(""), std::nan(""), 1e-3}};
  save_checkpoint(ck, dir);
  const auto back = load_checkpoint<double>(dir);
  ASSERT_EQ(back.params.size(), ck.params.size());
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    EXPECT_EQ(back.params[i].name, ck.params[i].name);
    EXPECT_EQ(back.params[i].shape, ck.params[i].shape);
    EXPECT_EQ(back.params[i].values, ck.params[i].values);
  }
  EXPECT_EQ(back.history, ck.history);
  auto loaded = load_model<double>(dir);
  for (std::size_t i = 0; i < net.parameters().size(); ++i)
    EXPECT_EQ(loaded->parameters()[i].tensor.values(), net.parameters()[i].tensor.values());
}

TEST(Checkpoint, FloatModelRoundTrip) {
  const auto dir = scratch("f32");
  models::UNet<float> net(tiny_unet());
  save_checkpoint(snapshot(net), dir);
  auto loaded = load_model<float>(dir);
  for (std::size_t i = 0; i < net.parameters().size(); ++i)
    EXPECT_EQ(loaded->parameters()[i].tensor.values(), net.parameters()[i].tensor.values());
}

TEST(Checkpoint, MismatchedArchitectureNamesParameter) {
  models::UNet<double> small(tiny_unet());
  auto wide_cfg = tiny_unet();
  wide_cfg.base_channels = 3;
  models::UNet<double> wide(wide_cfg);
  try {
    restore_parameters(wide, snapshot(small).params);
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("'enc0.conv1.weight'"), std::string::npos) << e.what();
  }
  auto deeper = tiny_unet();
  deeper.dilations = {1, 2, 3};
  models::UNet<double> deep(deeper);
  EXPECT_THROW(restore_parameters(deep, snapshot(small).params), NotFoundError);
}

TEST(Checkpoint, CorruptFilesAreReported) {
  const auto dir = scratch("corrupt");
  models::UNet<double> net(tiny_unet());
  save_checkpoint(snapshot(net), dir);
  {
    std::ofstream(dir / "tensors" / "param.head.bias.bin", std::ios::binary) << "xyz";
  }
  EXPECT_THROW(load_checkpoint<double>(dir), FormatError);
  {
    std::ofstream(dir / "manifest.json") << "{\"format\": \"wildfire-checkpoint-1\", ";
  }
  EXPECT_THROW(load_checkpoint<double>(dir), FormatError);
  EXPECT_THROW(load_checkpoint<double>(dir / "missing"), IoError);
}

TEST(History, CsvLayout) {
  const std::vector<HistoryRow> rows = {{1, 0.5, 0.25, 0.75, 1e-3}, {2, 0.125, std::nan(""), std::nan(""), 4e-5}};
  EXPECT_EQ(history_csv(rows),
            "epoch,train_loss,val_loss,val_iou,lr\n"
            "1,0.5,0.25,0.75,0.001\n"
            "2,0.125,,,4.0000000000000003e-05\n");
}

// ---------------------------------------------------------------------------
// trainer

TEST(Trainer, ZeroEpochsLeaveModelUnchanged) {
  models::UNet<double> net(tiny_unet());
  const auto before = snapshot(net).params;
  Trainer<double> tr(net, tiny_run(0), tiny_samples(4, 1));
  EXPECT_TRUE(tr.fit().empty());
  const auto after = snapshot(net).params;
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(after[i].values, before[i].values);
}

TEST(Trainer, SameSeedGivesIdenticalHistory) {
  auto run = [] {
    models::UNet<double> net(tiny_unet());
    Trainer<double> tr(net, tiny_run(3), tiny_samples(5, 2), tiny_samples(2, 3));
    return tr.fit();
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a, b);
  for (const auto& r : a) {
    EXPECT_TRUE(std::isfinite(r.val_loss));
    EXPECT_GE(r.val_iou, 0.0);
    EXPECT_LE(r.val_iou, 1.0);
  }
}

TEST(Trainer, ResumeContinuesBitIdentically) {
  const auto train = tiny_samples(5, 4), val = tiny_samples(2, 5);
  models::UNet<double> full(tiny_unet());
  Trainer<double> uninterrupted(full, tiny_run(4), train, val);
  uninterrupted.fit();

  const auto dir = scratch("resume");
  {
    models::UNet<double> first(tiny_unet());
    Trainer<double> tr(first, tiny_run(4), train, val);
    tr.fit(2);
    EXPECT_EQ(tr.epochs_done(), 2u);
    save_checkpoint(tr.checkpoint(), dir);
  }
  models::UNet<double> second(tiny_unet(/* same layout, fresh init */));
  Trainer<double> resumed(second, tiny_run(4), train, val);
  resumed.resume(load_checkpoint<double>(dir));
  resumed.fit();
  EXPECT_EQ(resumed.history(), uninterrupted.history());
  for (std::size_t i = 0; i < full.parameters().size(); ++i)
    EXPECT_EQ(second.parameters()[i].tensor.values(), full.parameters()[i].tensor.values())
        << full.parameters()[i].name;
}

TEST(Trainer, BestCheckpointTracksLowestValidationLoss) {
  models::UNet<double> net(tiny_unet());
  Trainer<double> tr(net, tiny_run(4), tiny_samples(5, 6), tiny_samples(2, 7));
  const auto& h = tr.fit();
  ASSERT_TRUE(tr.best().has_value());
  std::size_t best = 0;
  for (std::size_t i = 1; i < h.size(); ++i)
    if (h[i].val_loss < h[best].val_loss) best = i;
  EXPECT_EQ(tr.best()->epochs_done, h[best].epoch);
}

TEST(Trainer, NonFiniteLossAborts) {
  models::UNet<double> net(tiny_unet());
  auto w = net.parameter("head.bias");
  w.mutable_data()[0] = std::nan("");
  Trainer<double> tr(net, tiny_run(1), tiny_samples(3, 8));
  EXPECT_THROW(tr.fit(), NumericError);
}

TEST(Trainer, RefusesTestSplitSamples) {
  models::UNet<double> net(tiny_unet());
  auto samples = tiny_samples(3, 9);
  samples[1].split = "test";
  EXPECT_THROW(Trainer<double>(net, tiny_run(1), samples), ConfigError);
  EXPECT_THROW(Trainer<double>(net, tiny_run(1), {}), ConfigError);
}

TEST(Trainer, LossDecreasesOnFixture) {
  models::UNet<double> net(tiny_unet());
  auto cfg = tiny_run(12);
  cfg.augment = AugmentConfig::identity(16);
  cfg.optimizer.weight_decay = 0;
  Trainer<double> tr(net, cfg, tiny_samples(6, 10));
  const auto& h = tr.fit();
  EXPECT_LT(h.back().train_loss, h.front().train_loss);
}
