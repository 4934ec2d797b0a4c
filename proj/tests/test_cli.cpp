#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "../tools/cli_support.hpp"
#include "oracles.hpp"
#include "wildfire/firemask.hpp"
#include "wildfire/metrics.hpp"
#include "wildfire/png.hpp"
#include "wildfire/synthetic.hpp"
#include "wildfire/train.hpp"

#ifndef WILDFIRE_CLI
#error "WILDFIRE_CLI must name the wildfire binary"
#endif

using namespace wildfire;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Result {
  int code = -1;
  std::string out, err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           ("wildfire_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override {
    if (!HasFailure()) fs::remove_all(dir_);
  }

  Result run(const std::string& args, const std::string& env = "") {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && " + env + " '" WILDFIRE_CLI "' " + args + " > '" +
                            out.string() + "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  fs::path path(const std::string& rel) const { return dir_ / rel; }

  void write_rule(const std::string& file, const SpectralRule& r) {
    std::ofstream(path(file)) << rule_to_json(r).dump();
  }

  fs::path dir_;
};

std::string error_kind(const Result& r) {
  const auto j = json::parse(r.err);
  return j.at("error").at("kind").get<std::string>();
}

Scene one_band_scene(const std::vector<std::uint8_t>& fire, std::uint32_t w, std::uint32_t h, const std::string& id) {
  std::vector<std::uint16_t> b7(fire.size());
  for (std::size_t i = 0; i < fire.size(); ++i) b7[i] = fire[i] ? 65535 : 0;
  return Scene(w, h, {BandId::SWIR2}, {std::move(b7)}, id);
}

}  // namespace

TEST_F(Cli, IngestTilesAndIsDeterministic) {
  synthetic::SceneConfig cfg;
  cfg.width = cfg.height = 512;
  fs::create_directories(path("in"));
  save_scene(synthetic::make_scene(cfg, 1, "big"), path("in/big.tif").string());
  auto r = run("ingest --in in --out a/manifest.json --seed 4");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = load_manifest(path("a/manifest.json").string());
  ASSERT_EQ(m.samples.size(), 4u);
  for (const auto& e : m.samples) {
    EXPECT_EQ(e.valid_height, 256u);
    EXPECT_TRUE(fs::exists(m.resolve(e.image)));
  }
  ASSERT_EQ(run("ingest --in in --out b/manifest.json --seed 4").code, 0);
  EXPECT_EQ(slurp(path("a/manifest.json")), slurp(path("b/manifest.json")));
  EXPECT_EQ(slurp(path("a/patches/big_r256_c0.wfr")), slurp(path("b/patches/big_r256_c0.wfr")));
  EXPECT_TRUE(fs::exists(path("a/manifest.json.run.json")));

  fs::create_directories(path("empty"));
  r = run("ingest --in empty --out c/manifest.json");
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(error_kind(r), "not_found");
}

TEST_F(Cli, MaskVotingMatchesMajorityOracle) {
  synthetic::SceneConfig cfg;
  cfg.width = cfg.height = 96;
  cfg.p_empty = 0;
  cfg.min_fires = 3;
  save_scene(synthetic::make_scene(cfg, 5, "s"), path("s.tif").string());
  auto r = run("mask --scene s.tif --combiner voting --out m");
  ASSERT_EQ(r.code, 0) << r.err;
  std::vector<FireMask> rules;
  for (const char* n : {"m/rule_schroeder-like.png", "m/rule_murphy-like.png", "m/rule_kumar-roy-like.png"})
    rules.push_back(load_mask(path(n).string()));
  const auto combined = load_mask(path("m/combined.png").string());
  std::size_t fire = 0;
  for (std::size_t p = 0; p < combined.pixels(); ++p) {
    const int votes = rules[0].bits[p] + rules[1].bits[p] + rules[2].bits[p];
    ASSERT_EQ(combined.bits[p], votes >= 2 ? 1 : 0) << "pixel " << p;
    fire += combined.bits[p];
  }
  EXPECT_GT(fire, 0u);

  r = run("mask --scene s.tif --rules schroeder_like --combiner voting --out one");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(error_kind(r), "config");
}

TEST_F(Cli, TautologyRuleAndConfigDirectory) {
  synthetic::SceneConfig cfg;
  cfg.width = cfg.height = 32;
  save_scene(synthetic::make_scene(cfg, 2, "s"), path("s.tif").string());
  fs::create_directories(path("conf/rules"));
  write_rule("conf/rules/always.json", make_rule("always", {{{"B7", ">=", "0"}}}));
  const auto r = run("mask --scene s.tif --rules always --combiner none --out t", "WILDFIRE_CONFIG_DIR=conf");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = load_mask(path("t/rule_always.png").string());
  EXPECT_EQ(m.count(), 32u * 32u);
  EXPECT_NE(run("mask --scene s.tif --rules always --combiner none --out t").code, 0);
}

TEST_F(Cli, ZeroEpochCheckpointEqualsInitialization) {
  synthetic::SceneConfig cfg;
  cfg.width = cfg.height = 64;
  fs::create_directories(path("in"));
  for (int i = 0; i < 3; ++i)
    save_scene(synthetic::make_scene(cfg, 10 + i, "s" + std::to_string(i)), path("in/s" + std::to_string(i) + ".tif").string());
  ASSERT_EQ(run("ingest --in in --out d/manifest.json --patch 32").code, 0);
  ASSERT_EQ(run("mask --manifest d/manifest.json").code, 0);
  std::ofstream(path("zero.json")) << R"({"epochs": 0, "batch_size": 2, "augment": {"crop": 32}})";
  const auto r = run("train --model unet_tiny --train zero.json --manifest d/manifest.json --out z --dtype f64");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ck = train::load_checkpoint<double>(path("z/checkpoint"));
  models::UNetConfig ucfg;
  ucfg.base_channels = 4;
  models::UNet<double> fresh(ucfg);
  const auto init = train::capture_parameters(fresh);
  ASSERT_EQ(ck.params.size(), init.size());
  for (std::size_t i = 0; i < init.size(); ++i) {
    EXPECT_EQ(ck.params[i].name, init[i].name);
    EXPECT_EQ(ck.params[i].values, init[i].values) << init[i].name;
  }
  EXPECT_EQ(slurp(path("z/history.csv")), "epoch,train_loss,val_loss,val_iou,lr\n");
}

TEST_F(Cli, ResumeContinuesIdentically) {
  synthetic::SceneConfig cfg;
  cfg.width = cfg.height = 64;
  cfg.p_empty = 0;
  fs::create_directories(path("in"));
  for (int i = 0; i < 2; ++i)
    save_scene(synthetic::make_scene(cfg, 20 + i, "s" + std::to_string(i)), path("in/s" + std::to_string(i) + ".tif").string());
  ASSERT_EQ(run("ingest --in in --out d/manifest.json --patch 32 --seed 1").code, 0);
  ASSERT_EQ(run("mask --manifest d/manifest.json").code, 0);
  std::ofstream(path("t.json")) << R"({"epochs": 4, "batch_size": 3, "peak_lr": 0.005, "augment": {"crop": 24}, "seed": 3})";
  const std::string base = "train --model unet_tiny --manifest d/manifest.json --dtype f64 ";
  ASSERT_EQ(run(base + "--train t.json --out full").code, 0);
  ASSERT_EQ(run(base + "--train t.json --out half --stop-after 2").code, 0);
  const auto r = run(base + "--resume half/checkpoint --out rest");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("full/history.csv")), slurp(path("rest/history.csv")));
  const auto a = train::load_checkpoint<double>(path("full/checkpoint"));
  const auto b = train::load_checkpoint<double>(path("rest/checkpoint"));
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) EXPECT_EQ(a.params[i].values, b.params[i].values);
  EXPECT_EQ(a.optimizer_step, b.optimizer_step);
}

TEST_F(Cli, EvalOfPerfectOracleScoresOne) {
  Rng rng(9);
  fs::create_directories(path("in"));
  for (int i = 0; i < 2; ++i) {
    const auto fire = oracle::random_bits(rng, 40 * 40, 0.1);
    const auto id = "o" + std::to_string(i);
    save_scene(one_band_scene(fire, 40, 40, id), path("in/" + id + ".wfr").string());
    FireMask m(40, 40);
    m.bits = fire;
    save_mask(m, path("in/" + id + ".mask.png").string());
  }
  ASSERT_EQ(run("ingest --in in --out d/manifest.json --patch 32 --bands 7 --test-scene o0 --test-scene o1").code, 0);
  models::PixelLogisticConfig pcfg;
  pcfg.in_channels = 1;
  models::PixelLogistic<double> model(pcfg);
  model.parameter("head.weight").mutable_data()[0] = 20.0;
  model.parameter("head.bias").mutable_data()[0] = -10.0;
  train::save_checkpoint(train::snapshot(model), path("oracle"));

  const auto r = run("eval --checkpoint oracle --manifest d/manifest.json --out e --dtype f64 --workers 2");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(slurp(path("e/metrics.json")));
  EXPECT_NO_THROW(metrics::validate_report_json(report));
  for (const char* k : {"precision", "recall", "f_score", "iou"}) EXPECT_EQ(report.at(k).get<double>(), 1.0) << k;
  EXPECT_EQ(report.at("samples").get<int>(), 8);
  EXPECT_EQ(report.at("counts").at("tn").get<std::uint64_t>() + report.at("counts").at("tp").get<std::uint64_t>(),
            40u * 40u * 2u);  // padding is not counted

  // per-sample rows add up to the pooled counts
  std::istringstream csv(slurp(path("e/per_sample.csv")));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "id,tp,fp,fn,tn");
  std::uint64_t tp = 0, tn = 0;
  while (std::getline(csv, line)) {
    std::istringstream row(line);
    std::string id, f[4];
    std::getline(row, id, ',');
    for (auto& x : f) std::getline(row, x, ',');
    tp += std::stoull(f[0]);
    tn += std::stoull(f[3]);
  }
  EXPECT_EQ(tp, report.at("counts").at("tp").get<std::uint64_t>());
  EXPECT_EQ(tn, report.at("counts").at("tn").get<std::uint64_t>());
  EXPECT_NE(slurp(path("e/metrics.txt")).find("100.00"), std::string::npos);
}

TEST_F(Cli, RenderLayout) {
  synthetic::SceneConfig cfg;
  cfg.width = 40;
  cfg.height = 24;
  save_scene(synthetic::make_scene(cfg, 3, "s"), path("s.tif").string());
  Rng rng(4);
  FireMask truth(40, 24), empty(40, 24);
  truth.bits = oracle::random_bits(rng, 40 * 24, 0.2);
  save_mask(truth, path("t.png").string());
  save_mask(empty, path("e.png").string());

  auto r = run("render --image s.tif --truth t.png --pred t.png --out same.png --margin 6");
  ASSERT_EQ(r.code, 0) << r.err;
  auto img = png::read(path("same.png").string());
  ASSERT_EQ(img.width, 3u * (40 + 6));
  ASSERT_EQ(img.height, 24u + 6);
  ASSERT_EQ(img.channels, 3);
  auto px = [&](const png::Image& im, int panel, std::uint32_t y, std::uint32_t x, int ch) {
    return im.pixels[((3 + y) * im.width + panel * 46 + 3 + x) * 3 + ch];
  };
  for (std::uint32_t y = 0; y < 24; ++y)
    for (std::uint32_t x = 0; x < 40; ++x) {
      ASSERT_EQ(px(img, 1, y, x, 0), px(img, 2, y, x, 0));
      ASSERT_EQ(px(img, 1, y, x, 0), truth.at(y, x) ? 255 : 0);
    }

  ASSERT_EQ(run("render --image s.tif --truth e.png --pred e.png --out empty.png --margin 6").code, 0);
  img = png::read(path("empty.png").string());
  bool composite_lit = false;
  for (std::uint32_t y = 0; y < 24; ++y)
    for (std::uint32_t x = 0; x < 40; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        composite_lit = composite_lit || px(img, 0, y, x, ch) != 0;
        ASSERT_EQ(px(img, 1, y, x, ch), 0);
        ASSERT_EQ(px(img, 2, y, x, ch), 0);
      }
  EXPECT_TRUE(composite_lit);

  save_mask(FireMask(41, 24), path("wide.png").string());
  r = run("render --image s.tif --truth wide.png --pred t.png --out bad.png");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(error_kind(r), "shape");
}

TEST_F(Cli, ErrorsAreJsonOnStderr) {
  auto r = run("eval --checkpoint nowhere --manifest nothing.json --out e");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(error_kind(r), "not_found");
  r = run("train --manifest m.json");
  EXPECT_EQ(r.code, 64);
  EXPECT_EQ(error_kind(r), "usage");
  std::ofstream(path("broken.json")) << "{ not json";
  r = run("dataset --manifest broken.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(error_kind(r), "format");
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, RunManifestRecordsConfigsAndArtifacts) {
  ASSERT_EQ(run("synth --out sc --count 1 --size 32 --seed 5").code, 0);
  ASSERT_EQ(run("mask --scene sc/synth_000.tif --out mk").code, 0);
  const auto j = json::parse(slurp(path("mk/run_manifest.json")));
  EXPECT_EQ(j.at("command"), "mask");
  EXPECT_EQ(j.at("configs").size(), 3u);
  EXPECT_EQ(j.at("artifacts").size(), 4u);
  EXPECT_EQ(j.at("config_hash").get<std::string>().size(), 40u);
  const auto s = json::parse(slurp(path("sc/run_manifest.json")));
  EXPECT_EQ(s.at("seed"), 5);
}

TEST(GitBlobHash, MatchesGitHashObject) {
  // values from git hash-object
  EXPECT_EQ(cli::git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(cli::git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}
