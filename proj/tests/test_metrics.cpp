#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "wildfire/metrics.hpp"
#include "wildfire/models.hpp"

using namespace wildfire;
using namespace wildfire::metrics;

namespace {

FireMask mask_of(std::vector<std::uint8_t> bits, std::uint32_t w, std::uint32_t h) {
  FireMask m(w, h);
  m.bits = std::move(bits);
  return m;
}

ConfusionCounts brute_tally(const std::vector<std::uint8_t>& p, const std::vector<std::uint8_t>& t) {
  ConfusionCounts c;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] && t[i]) c.tp++;
    if (p[i] && !t[i]) c.fp++;
    if (!p[i] && t[i]) c.fn++;
    if (!p[i] && !t[i]) c.tn++;
  }
  return c;
}

// One channel holding the label itself; a 1x1 head w=20, b=-10 turns it
// into 0.99995 / 0.00005.
PatchSample label_sample(const std::string& id, std::vector<std::uint8_t> bits, std::uint32_t w, std::uint32_t h) {
  PatchSample s;
  s.id = id;
  s.channels = 1;
  s.width = s.valid_width = w;
  s.height = s.valid_height = h;
  s.mask = std::move(bits);
  for (auto b : s.mask) s.image.push_back(b ? 1.0f : 0.0f);
  return s;
}

struct OracleModel : models::PixelLogistic<double> {
  OracleModel() : models::PixelLogistic<double>(models::PixelLogisticConfig{1, 0}) {
    parameter("head.weight").mutable_data()[0] = 20.0;
    parameter("head.bias").mutable_data()[0] = -10.0;
  }
};

}  // namespace

TEST(Binarize, ThresholdRule) {
  const auto ones = binarize(std::vector<float>(12, 0.9f), 4, 3, 0.5);
  for (auto b : ones.bits) EXPECT_EQ(b, 1);
  const auto edge = binarize(std::vector<double>{0.5, 0.4999999, 0.5000001}, 3, 1, 0.5);
  EXPECT_EQ(edge.bits, (std::vector<std::uint8_t>{1, 0, 1}));
  EXPECT_THROW(binarize(std::vector<double>(5, 0.1), 2, 2, 0.5), ShapeError);
}

TEST(Binarize, MatchesPixelLoop) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const double th = rng.uniform(0.05, 0.95);
    const auto p = oracle::random_vector(rng, 16 * 16, 0.0, 1.0);
    const auto m = binarize(p, 16, 16, th);
    for (std::size_t i = 0; i < p.size(); ++i) ASSERT_EQ(m.bits[i], p[i] >= th ? 1 : 0);
  }
}

TEST(Confusion, PerfectAndComplement) {
  Rng rng(5);
  const auto t = oracle::random_bits(rng, 64, 0.3);
  std::uint64_t k = 0;
  for (auto b : t) k += b;
  const auto c = confusion(mask_of(t, 8, 8), mask_of(t, 8, 8));
  EXPECT_EQ(c, (ConfusionCounts{k, 0, 0, 64 - k}));
  auto inv = t;
  for (auto& b : inv) b = !b;
  const auto w = confusion(mask_of(inv, 8, 8), mask_of(t, 8, 8));
  EXPECT_EQ(w.tp, 0u);
  EXPECT_EQ(w.tn, 0u);
  EXPECT_EQ(w.total(), 64u);
}

TEST(Confusion, MatchesBruteForceOn100RandomPairs) {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = oracle::random_bits(rng, 256, rng.uniform());
    const auto t = oracle::random_bits(rng, 256, rng.uniform());
    ASSERT_EQ(confusion(mask_of(p, 16, 16), mask_of(t, 16, 16)), brute_tally(p, t)) << "pair " << trial;
  }
}

TEST(Confusion, RegionAndMismatch) {
  // 4x4 all-fire truth, prediction fire only in the top-left 2x2.
  std::vector<std::uint8_t> p(16, 0);
  p[0] = p[1] = p[4] = p[5] = 1;
  const auto c = confusion(mask_of(p, 4, 4), mask_of(std::vector<std::uint8_t>(16, 1), 4, 4), 2, 3);
  EXPECT_EQ(c, (ConfusionCounts{4, 0, 2, 0}));
  EXPECT_THROW(confusion(FireMask(4, 4), FireMask(4, 5)), ShapeError);
}

TEST(ComputeMetrics, HandArithmetic) {
  const auto r = compute_metrics({2, 1, 1, 10});
  EXPECT_DOUBLE_EQ(r.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.f_score, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.iou, 0.5);
}

TEST(ComputeMetrics, Conventions) {
  const auto perfect = compute_metrics({7, 0, 0, 9});
  EXPECT_EQ(perfect.precision, 1.0);
  EXPECT_EQ(perfect.recall, 1.0);
  EXPECT_EQ(perfect.f_score, 1.0);
  EXPECT_EQ(perfect.iou, 1.0);
  const auto negative = compute_metrics({0, 0, 0, 100});
  EXPECT_EQ(negative.precision, 1.0);
  EXPECT_EQ(negative.iou, 1.0);
  const auto missed = compute_metrics({0, 0, 5, 95});  // nothing predicted
  EXPECT_EQ(missed.precision, 0.0);
  EXPECT_EQ(missed.recall, 0.0);
  EXPECT_EQ(missed.f_score, 0.0);
  EXPECT_EQ(missed.iou, 0.0);
}

TEST(ComputeMetrics, HarmonicMeanAndScaleInvariance) {
  Rng rng(23);
  for (int trial = 0; trial < 2000; ++trial) {
    const ConfusionCounts c{1 + rng.below(500), rng.below(500), rng.below(500), rng.below(5000)};
    const auto r = compute_metrics(c);
    ASSERT_NEAR(r.f_score, 2 * r.precision * r.recall / (r.precision + r.recall), 1e-12);
    const std::uint64_t k = 1 + rng.below(1000);
    const auto s = compute_metrics({c.tp * k, c.fp * k, c.fn * k, c.tn * k});
    ASSERT_NEAR(s.precision, r.precision, 1e-15);
    ASSERT_NEAR(s.recall, r.recall, 1e-15);
    ASSERT_NEAR(s.f_score, r.f_score, 1e-15);
    ASSERT_NEAR(s.iou, r.iou, 1e-15);
  }
}

TEST(ComputeMetrics, IouNeverExceedsDiceOn10000Tuples) {
  Rng rng(29);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto scale = rng.below(3) == 0 ? 5u : 100000u;
    ConfusionCounts c{rng.below(scale), rng.below(scale), rng.below(scale), rng.below(scale)};
    if (c.tp + c.fp + c.fn == 0) c.fp = 1;
    const auto r = compute_metrics(c);
    ASSERT_LE(r.iou, r.f_score) << c.tp << " " << c.fp << " " << c.fn;
    ASSERT_LE(r.f_score, 1.0);
  }
}

// Published comparison rows (precision, recall, F-score, IoU in percent).
// F is the harmonic mean of the first two up to the 2-decimal rounding of
// the inputs, and IoU <= F in every row. IoU is not F/(2-F), so the table's
// IoU cannot come from the same pooled counts as its F-score.
TEST(ReferenceTable, RowsAreInternallyConsistent) {
  struct Row {
    const char* name;
    double p, r, f, iou;
  };
  const Row rows[] = {{"TransUNet", 88.46, 86.88, 87.66, 87.49},
                      {"Swin-Unet", 88.28, 92.30, 90.24, 89.93},
                      {"Our UNet", 93.37, 93.96, 93.67, 93.58}};
  for (const auto& row : rows) {
    const double hm = 2 * row.p * row.r / (row.p + row.r);
    EXPECT_NEAR(hm, row.f, 0.011) << row.name;
    EXPECT_LE(row.iou, row.f) << row.name;
    const double f = row.f / 100;
    EXPECT_GT(std::abs(100 * f / (2 - f) - row.iou), 1.0) << row.name;
  }
}

TEST(ReportJson, RoundTripAndValidation) {
  const auto r = compute_metrics({30, 4, 6, 960}, 0.5);
  const auto j = to_json(r);
  EXPECT_NO_THROW(validate_report_json(j));
  EXPECT_NO_THROW(validate_report_json(nlohmann::json::parse(j.dump())));
  auto bad = j;
  bad["iou"] = 1.5;
  EXPECT_THROW(validate_report_json(bad), FormatError);
  bad = j;
  bad["precision"] = 0.5;
  EXPECT_THROW(validate_report_json(bad), FormatError);
  bad = j;
  bad["counts"]["tp"] = -1;
  EXPECT_THROW(validate_report_json(bad), FormatError);
  bad = j;
  bad["threshold"] = 1.0;
  EXPECT_THROW(validate_report_json(bad), FormatError);
  bad = j;
  bad.erase("recall");
  EXPECT_THROW(validate_report_json(bad), FormatError);
  EXPECT_THROW(validate_report_json(nlohmann::json::array()), FormatError);
}

TEST(ReportTable, ColumnsAndPercent) {
  const auto table = format_table({{"UNet", compute_metrics({2, 1, 1, 10})}, {"Oracle", compute_metrics({1, 0, 0, 1})}});
  EXPECT_EQ(table,
            "Method  Precision     Recall    F-score        IoU\n"
            "--------------------------------------------------\n"
            "UNet        66.67      66.67      66.67      50.00\n"
            "Oracle     100.00     100.00     100.00     100.00\n");
}

TEST(Evaluate, PerfectModelScoresOne) {
  Rng rng(31);
  OracleModel m;
  const auto ev = evaluate(m, {label_sample("a", oracle::random_bits(rng, 256, 0.2), 16, 16)}, 0.5);
  EXPECT_EQ(ev.report.precision, 1.0);
  EXPECT_EQ(ev.report.recall, 1.0);
  EXPECT_EQ(ev.report.f_score, 1.0);
  EXPECT_EQ(ev.report.iou, 1.0);
  EXPECT_EQ(ev.report.counts.total(), 256u);
}

TEST(Evaluate, JointEqualsSummedCounts) {
  Rng rng(37);
  OracleModel m;
  // flipped inputs make the model err on a known set of pixels
  auto a = label_sample("a", oracle::random_bits(rng, 256, 0.3), 16, 16);
  auto b = label_sample("b", oracle::random_bits(rng, 24 * 20, 0.1), 24, 20);
  for (std::size_t i = 0; i < a.image.size(); i += 7) a.image[i] = 1.0f - a.image[i];
  for (std::size_t i = 0; i < b.image.size(); i += 5) b.image[i] = 1.0f - b.image[i];
  b.valid_height = 15;
  const auto ea = evaluate(m, {a}, 0.5), eb = evaluate(m, {b}, 0.5);
  const auto joint = evaluate(m, {a, b}, 0.5, 1, 2);
  EXPECT_EQ(joint.report.counts, ea.report.counts + eb.report.counts);
  EXPECT_EQ(joint.report, compute_metrics(ea.report.counts + eb.report.counts));
  EXPECT_EQ(eb.report.counts.total(), 24u * 15u);
  ASSERT_EQ(joint.per_sample.size(), 2u);
  EXPECT_EQ(joint.per_sample[1].first, "b");
  EXPECT_LT(joint.report.iou, 1.0);
}

TEST(Evaluate, ZeroHeadOnFireFreeTruth) {
  models::PixelLogisticConfig cfg;
  cfg.in_channels = 1;
  models::PixelLogistic<float> m(cfg);
  m.parameter("head.weight").mutable_data()[0] = 0.0f;
  const auto ev = evaluate(m, {label_sample("quiet", std::vector<std::uint8_t>(64, 0), 8, 8)}, 0.6);
  EXPECT_EQ(ev.report.counts, (ConfusionCounts{0, 0, 0, 64}));
  EXPECT_EQ(ev.report.precision, 1.0);
  EXPECT_EQ(ev.report.iou, 1.0);
  // at 0.5 every 0.5 output counts as fire
  EXPECT_EQ(evaluate(m, {label_sample("quiet", std::vector<std::uint8_t>(64, 0), 8, 8)}, 0.5).report.iou, 0.0);
}

TEST(Evaluate, RejectsBadArguments) {
  OracleModel m;
  EXPECT_THROW(evaluate(m, {}, 0.5), ConfigError);
  EXPECT_THROW(evaluate(m, {label_sample("a", std::vector<std::uint8_t>(4, 0), 2, 2)}, 1.0), ConfigError);
}
