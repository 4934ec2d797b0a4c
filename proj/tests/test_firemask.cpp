#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "wildfire/firemask.hpp"

using namespace wildfire;
namespace fs = std::filesystem;

namespace {

Scene two_by_two() {
  return Scene(2, 2, {BandId::SWIR1, BandId::SWIR2, BandId::NIR},
               {{5, 5, 5, 5}, {4000, 900, 3000, 4000}, {1000, 100, 2000, 1000}}, "tiny");
}

FireMask from_bits(std::uint32_t w, std::uint32_t h, const std::vector<std::uint8_t>& bits, std::string src = "m") {
  FireMask m(w, h, std::move(src));
  m.bits = bits;
  return m;
}

FireMask random_mask(Rng& rng, std::uint32_t w = 16, std::uint32_t h = 16) {
  return from_bits(w, h, oracle::random_bits(rng, std::size_t{w} * h, 0.4));
}

}  // namespace

TEST(Parse, BandExpressionsAndComparisons) {
  auto e = parse_band_expr(" B7 / B5 ");
  EXPECT_EQ(e.op, BandExpr::Op::Ratio);
  EXPECT_EQ(*e.lhs.band, BandId::SWIR2);
  EXPECT_EQ(*e.rhs.band, BandId::NIR);
  EXPECT_EQ(parse_band_expr("B7-B6").op, BandExpr::Op::Difference);
  auto c = parse_band_expr("2.5");
  EXPECT_FALSE(c.lhs.band.has_value());
  EXPECT_DOUBLE_EQ(c.lhs.constant, 2.5);
  EXPECT_EQ(parse_cmp("≥"), Cmp::GreaterEqual);
  EXPECT_EQ(parse_cmp("<="), Cmp::LessEqual);
  EXPECT_THROW(parse_cmp("=="), ConfigError);
  EXPECT_THROW(parse_band_expr("B7 *"), ConfigError);
  EXPECT_THROW(parse_band_expr("B12"), ConfigError);
  EXPECT_THROW(parse_band_expr(""), ConfigError);
}

TEST(EvalRule, RatioAndThresholdExample) {
  auto rule = make_rule("r", {{"B7/B5", ">", "2"}, {"B7", ">", "1000"}});
  auto m = eval_rule(two_by_two(), rule);
  EXPECT_EQ(m.bits, (std::vector<std::uint8_t>{1, 0, 0, 1}));
  EXPECT_EQ(m.source, "r");
  EXPECT_EQ(m.width, 2u);
}

TEST(EvalRule, UnsatisfiableAndTautology) {
  for (auto v : eval_rule(two_by_two(), make_rule("never", {{"B7", ">", "65535"}})).bits) EXPECT_EQ(v, 0);
  for (auto v : eval_rule(two_by_two(), make_rule("always", {{"B7", ">=", "0"}})).bits) EXPECT_EQ(v, 1);
}

TEST(EvalRule, ZeroDenominatorIsFalse) {
  Scene s(2, 1, {BandId::SWIR2, BandId::NIR}, {{10, 10}, {0, 1}});
  auto m = eval_rule(s, make_rule("r", {{"B7/B5", ">", "0"}}));
  EXPECT_EQ(m.bits, (std::vector<std::uint8_t>{0, 1}));
  // a clause that would be true for any finite value still fails on zero
  auto m2 = eval_rule(s, make_rule("r", {{"B7/B5", ">=", "-1e300"}}));
  EXPECT_EQ(m2.bits[0], 0);
}

TEST(EvalRule, MissingBandIsNotFound) {
  EXPECT_THROW(eval_rule(two_by_two(), make_rule("r", {{"B4", ">", "1"}})), NotFoundError);
}

TEST(EvalRule, MatchesPerPixelOracle) {
  Rng rng(3);
  std::vector<std::vector<std::uint16_t>> planes(3, std::vector<std::uint16_t>(64));
  for (auto& p : planes)
    for (auto& v : p) v = static_cast<std::uint16_t>(rng.below(20000));
  Scene s(8, 8, {BandId::NIR, BandId::SWIR1, BandId::SWIR2}, planes);
  auto rule = make_rule("r", {{"B7/B6", ">", "1.2"}, {"B7-B5", ">=", "100"}, {"B6", "<", "15000"}});
  auto m = eval_rule(s, rule);
  for (std::size_t p = 0; p < 64; ++p) {
    const double b5 = planes[0][p], b6 = planes[1][p], b7 = planes[2][p];
    const bool expect = b6 != 0 && b7 / b6 > 1.2 && b7 - b5 >= 100 && b6 < 15000;
    EXPECT_EQ(m.bits[p], expect ? 1 : 0) << p;
  }
  EXPECT_EQ(eval_rule(s, rule).bits, m.bits);
}

TEST(Rules, JsonRoundTripAndFile) {
  auto rule = make_rule("r", {{"B7/B5", ">", "2.5"}, {"B7", "<=", "60000"}});
  auto back = rule_from_json(rule_to_json(rule));
  EXPECT_EQ(back.name, "r");
  ASSERT_EQ(back.clauses.size(), 2u);
  EXPECT_EQ(back.clauses[1].cmp, Cmp::LessEqual);

  auto dir = fs::temp_directory_path() / "wf_rules_test";
  fs::create_directories(dir);
  std::ofstream(dir / "r.json") << R"({"name": "n", "clauses": [{"lhs": "B7", "cmp": ">", "rhs": 100}]})";
  EXPECT_EQ(load_rule((dir / "r.json").string()).clauses.front().rhs.lhs.constant, 100.0);
  std::ofstream(dir / "empty.json") << R"({"name": "n", "clauses": []})";
  EXPECT_THROW(load_rule((dir / "empty.json").string()), ConfigError);
  std::ofstream(dir / "broken.json") << "{";
  EXPECT_THROW(load_rule((dir / "broken.json").string()), ConfigError);
  EXPECT_THROW(load_rule((dir / "absent.json").string()), IoError);
  fs::remove_all(dir);
}

TEST(Rules, BundledExamplesParse) {
  auto rules = example_rules();
  ASSERT_EQ(rules.size(), 3u);
  EXPECT_EQ(rules[0].name, "schroeder-like");
  EXPECT_EQ(rules[1].name, "murphy-like");
  EXPECT_EQ(rules[2].name, "kumar-roy-like");
}

TEST(Combine, IntersectionPixelExamples) {
  auto a = from_bits(2, 1, {1, 1}), b = from_bits(2, 1, {1, 1}), c = from_bits(2, 1, {1, 0});
  EXPECT_EQ(combine_intersection({a, b, c}).bits, (std::vector<std::uint8_t>{1, 0}));
  Rng rng(1);
  auto m = random_mask(rng);
  EXPECT_EQ(combine_intersection({m, m}).bits, m.bits);
}

TEST(Combine, VotingPixelExamples) {
  auto a = from_bits(4, 1, {1, 1, 1, 0}), b = from_bits(4, 1, {1, 0, 1, 0}), c = from_bits(4, 1, {0, 0, 1, 0});
  EXPECT_EQ(combine_voting({a, b, c}).bits, (std::vector<std::uint8_t>{1, 0, 1, 0}));
  EXPECT_EQ(combine_voting({a, b, c}).source, "voting");
}

TEST(Combine, ErrorCases) {
  auto a = from_bits(2, 1, {1, 0}), b = from_bits(1, 2, {1, 0});
  EXPECT_THROW(combine_intersection({a}), ConfigError);
  EXPECT_THROW(combine_voting({a}), ConfigError);
  EXPECT_THROW(combine_intersection({a, b}), ShapeError);
  EXPECT_THROW(combine_voting({a, a}, 3), ConfigError);
  EXPECT_EQ(combine_union({a}).bits, a.bits);
}

TEST(Combine, MatchBruteForceAndProperties) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<FireMask> m{random_mask(rng), random_mask(rng), random_mask(rng)};
    auto inter = combine_intersection(m), vote = combine_voting(m), uni = combine_union(m);
    for (std::size_t p = 0; p < 256; ++p) {
      const int n = m[0].bits[p] + m[1].bits[p] + m[2].bits[p];
      EXPECT_EQ(inter.bits[p], n == 3 ? 1 : 0);
      EXPECT_EQ(vote.bits[p], n >= 2 ? 1 : 0);
      EXPECT_EQ(uni.bits[p], n >= 1 ? 1 : 0);
      EXPECT_LE(inter.bits[p], vote.bits[p]);
    }
    std::vector<FireMask> perm{m[2], m[0], m[1]};
    EXPECT_EQ(combine_intersection(perm).bits, inter.bits);
    EXPECT_EQ(combine_voting(perm).bits, vote.bits);
  }
}

TEST(MaskFiles, PngAndWfrRoundTrip) {
  Rng rng(4);
  auto m = random_mask(rng, 13, 7);
  auto dir = fs::temp_directory_path() / "wf_mask_test";
  fs::create_directories(dir);
  for (const char* name : {"m.png", "m.wfr"}) {
    const auto path = (dir / name).string();
    save_mask(m, path);
    auto back = load_mask(path);
    EXPECT_EQ(back.width, 13u);
    EXPECT_EQ(back.height, 7u);
    EXPECT_EQ(back.bits, m.bits) << name;
  }
  fs::remove_all(dir);
}
