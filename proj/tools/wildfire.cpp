// wildfire: batch frontend over the wildfire library.
//
//   synth    procedural test scenes
//   ingest   tile scenes into a dataset manifest
//   mask     rule masks for a scene, or label every sample of a manifest
//   dataset  split summary / re-split of a manifest
//   train    fit a model, write checkpoints and the history CSV
//   eval     micro-averaged metrics of a checkpoint on a split
//   infer    probability / fire mask for a whole scene
//   render   false-colour | truth | prediction panel PNG

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cli_support.hpp"
#include "wildfire/dataset.hpp"
#include "wildfire/firemask.hpp"
#include "wildfire/metrics.hpp"
#include "wildfire/models.hpp"
#include "wildfire/parallel.hpp"
#include "wildfire/png.hpp"
#include "wildfire/synthetic.hpp"
#include "wildfire/train.hpp"

using namespace wildfire;
using namespace wildfire::cli;

namespace {

struct Common {
  std::vector<std::string> argv;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::string dtype = "f32";
};

bool is_scene_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  const auto stem = p.stem().string();
  if (stem.size() > 5 && stem.ends_with(".mask")) return false;
  return ext == ".tif" || ext == ".tiff" || ext == ".wfr";
}

std::optional<fs::path> mask_beside(const fs::path& scene) {
  for (const char* ext : {".png", ".wfr"}) {
    auto p = scene.parent_path() / (scene.stem().string() + ".mask" + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

std::string relative_to(const fs::path& p, const fs::path& base) {
  return fs::relative(fs::absolute(p), fs::absolute(base)).generic_string();
}

fs::path run_manifest_path(const fs::path& out) {
  if (fs::is_directory(out)) return out / "run_manifest.json";
  auto p = out;
  p += ".run.json";
  return p;
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t count = 4;
  std::uint32_t size = 256;
  double p_empty = 0.1;
};

void cmd_synth(const SynthArgs& a, const Common& c) {
  RunManifest run("synth", c.argv);
  const std::uint64_t seed = c.seed.value_or(0);
  run.seed(seed);
  fs::create_directories(a.out);
  synthetic::SceneConfig cfg;
  cfg.width = cfg.height = a.size;
  cfg.p_empty = a.p_empty;
  for (std::size_t i = 0; i < a.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%03zu", i);
    const auto scene = synthetic::make_scene(cfg, Rng::stream(seed, i)(), name);
    const auto path = fs::path(a.out) / (std::string(name) + ".tif");
    save_scene(scene, path.string());
    run.artifact(path);
    run.artifact(sidecar_path(path));
  }
  run.write(fs::path(a.out) / "run_manifest.json");
  std::cout << "wrote " << a.count << " scenes to " << a.out << "\n";
}

// --- ingest ----------------------------------------------------------------

struct SplitArgs {
  double train_fraction = 0.8;
  double val_fraction = 0.2;
  std::vector<std::string> test_scenes;
};

void assign_splits(DatasetManifest& m, const SplitArgs& s, std::uint64_t seed) {
  SplitSpec spec;
  spec.train_fraction = s.train_fraction;
  spec.val_fraction = s.val_fraction;
  const std::set<std::string> held(s.test_scenes.begin(), s.test_scenes.end());
  std::set<std::string> seen;
  for (const auto& e : m.samples)
    if (held.count(e.scene_id)) {
      spec.test_ids.push_back(e.id);
      seen.insert(e.scene_id);
    }
  for (const auto& id : held)
    if (!seen.count(id)) throw NotFoundError("test scene '" + id + "' is not in the dataset");
  const auto parts = split(m.samples, spec, seed);
  std::map<std::string, std::string> tag;
  for (const auto& e : parts.train) tag[e.id] = "train";
  for (const auto& e : parts.val) tag[e.id] = "val";
  for (const auto& e : parts.test) tag[e.id] = "test";
  for (auto& e : m.samples) e.split = tag.count(e.id) ? tag[e.id] : "unassigned";
}

struct IngestArgs {
  std::string in_dir;
  std::string out;
  std::uint32_t patch = 256;
  std::string bands = "7,6,2";
  std::string normalize = "fixed_max";
  SplitArgs split;
};

void cmd_ingest(const IngestArgs& a, const Common& c) {
  RunManifest run("ingest", c.argv);
  const std::uint64_t seed = c.seed.value_or(0);
  run.seed(seed);
  if (!fs::is_directory(a.in_dir)) throw IoError("input directory does not exist: " + a.in_dir);
  std::vector<fs::path> scenes;
  for (const auto& ent : fs::directory_iterator(a.in_dir))
    if (ent.is_regular_file() && is_scene_file(ent.path())) scenes.push_back(ent.path());
  std::sort(scenes.begin(), scenes.end());
  if (scenes.empty()) throw NotFoundError("no .tif/.wfr scenes in " + a.in_dir);
  if (a.patch < 1) throw ConfigError("patch size must be positive");

  const fs::path out = a.out;
  const fs::path base = fs::absolute(out).parent_path();
  const fs::path patch_dir = base / "patches", mask_dir = base / "masks";
  fs::create_directories(patch_dir);

  DatasetManifest m;
  m.bands = parse_bands(a.bands);
  m.normalize = normalize_policy_from_string(a.normalize);
  m.patch = a.patch;
  m.base_dir = base;
  for (const auto& path : scenes) {
    const Scene scene = load_scene(path.string());
    for (BandId b : m.bands)
      if (!scene.has_band(b))
        throw NotFoundError("scene " + path.string() + " lacks band " + std::to_string(band_index(b)));
    std::optional<FireMask> mask;
    if (auto mp = mask_beside(path)) {
      mask = load_mask(mp->string());
      if (mask->width != scene.width() || mask->height != scene.height())
        throw ShapeError("mask " + mp->string() + " does not match its scene");
      fs::create_directories(mask_dir);
    }
    const auto grid = tile_grid(scene.height(), scene.width(), a.patch);
    std::vector<ManifestEntry> entries(grid.size());
    parallel_for(grid.size(), c.workers, [&](std::size_t i) {
      const auto [r0, c0] = grid[i];
      const Scene window = scene_window(scene, r0, c0, a.patch);
      ManifestEntry& e = entries[i];
      e.id = window.scene_id();
      e.scene_id = scene.scene_id();
      e.row = r0;
      e.col = c0;
      e.valid_height = std::min(a.patch, scene.height() - r0);
      e.valid_width = std::min(a.patch, scene.width() - c0);
      const auto img = patch_dir / (e.id + ".wfr");
      save_scene(window, img.string());
      e.image = relative_to(img, base);
      if (mask) {
        const auto mfile = mask_dir / (e.id + ".png");
        save_mask(mask_window(*mask, r0, c0, a.patch), mfile.string());
        e.mask = relative_to(mfile, base);
      }
    });
    for (auto& e : entries) {
      run.artifact(m.resolve(e.image));
      if (!e.mask.empty()) run.artifact(m.resolve(e.mask));
      m.samples.push_back(std::move(e));
    }
  }
  std::set<std::string> ids;
  for (const auto& e : m.samples)
    if (!ids.insert(e.id).second) throw ConfigError("duplicate sample id '" + e.id + "' (two scenes share an id)");
  assign_splits(m, a.split, seed);
  save_manifest(m, out.string());
  run.artifact(out);
  run.write(run_manifest_path(out));
  std::cout << "ingested " << scenes.size() << " scenes into " << m.samples.size() << " samples\n";
}

// --- mask ------------------------------------------------------------------

struct MaskArgs {
  std::string scene;
  std::string manifest;
  std::vector<std::string> rules;
  std::string combiner = "voting";
  std::size_t quorum = 2;
  std::string out;
};

std::vector<fs::path> rule_paths(const std::vector<std::string>& names) {
  std::vector<fs::path> out;
  if (names.empty()) {
    const fs::path dir = config_dir() / "rules";
    if (fs::is_directory(dir))
      for (const auto& ent : fs::directory_iterator(dir))
        if (ent.path().extension() == ".json") out.push_back(ent.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw NotFoundError("no rules given and none found in " + dir.string());
    return out;
  }
  for (const auto& n : names) out.push_back(resolve_config(n, "rules"));
  return out;
}

FireMask combine(const std::vector<FireMask>& masks, const std::string& how, std::size_t quorum) {
  if (how == "voting") return combine_voting(masks, quorum);
  if (how == "intersection") return combine_intersection(masks);
  if (how == "union") return combine_union(masks);
  throw ConfigError("unknown combiner '" + how + "' (voting, intersection, union, none)");
}

std::string safe_name(std::string s) {
  for (auto& ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  return s;
}

void cmd_mask(const MaskArgs& a, const Common& c) {
  RunManifest run("mask", c.argv);
  if (a.scene.empty() == a.manifest.empty()) throw ConfigError("give exactly one of --scene or --manifest");
  std::vector<SpectralRule> rules;
  for (const auto& p : rule_paths(a.rules)) {
    rules.push_back(load_rule(p.string()));
    run.config(p);
  }
  const bool combined = a.combiner != "none";
  if (!combined && rules.size() != 1 && !a.manifest.empty())
    throw ConfigError("labelling a manifest without a combiner needs exactly one rule");

  if (!a.scene.empty()) {
    const fs::path out = a.out;
    fs::create_directories(out);
    const Scene scene = load_scene(a.scene);
    std::vector<FireMask> masks;
    for (const auto& r : rules) masks.push_back(eval_rule(scene, r));
    if (combined) {
      const auto m = combine(masks, a.combiner, a.quorum);
      save_mask(m, (out / "combined.png").string());
      run.artifact(out / "combined.png");
    }
    for (std::size_t i = 0; i < rules.size(); ++i) {
      const auto p = out / ("rule_" + safe_name(rules[i].name) + ".png");
      save_mask(masks[i], p.string());
      run.artifact(p);
    }
    run.write(out / "run_manifest.json");
    std::cout << "wrote " << rules.size() << " rule masks" << (combined ? " and the combined mask" : "") << " to "
              << out.string() << "\n";
    return;
  }

  DatasetManifest m = load_manifest(a.manifest);
  const fs::path out = a.out.empty() ? m.base_dir / "masks" : fs::path(a.out);
  fs::create_directories(out);
  std::vector<std::string> files(m.samples.size());
  std::size_t fire = 0, pixels = 0;
  std::vector<std::size_t> fire_per(m.samples.size());
  parallel_for(m.samples.size(), c.workers, [&](std::size_t i) {
    const auto& e = m.samples[i];
    const Scene scene = load_scene(m.resolve(e.image).string());
    std::vector<FireMask> masks;
    for (const auto& r : rules) masks.push_back(eval_rule(scene, r));
    FireMask label = combined ? combine(masks, a.combiner, a.quorum) : masks.front();
    // nothing outside the scene extent is fire
    for (std::uint32_t r = 0; r < label.height; ++r)
      for (std::uint32_t k = 0; k < label.width; ++k)
        if (r >= e.valid_height || k >= e.valid_width) label.bits[std::size_t{r} * label.width + k] = 0;
    const auto p = out / (e.id + ".png");
    save_mask(label, p.string());
    files[i] = relative_to(p, m.base_dir);
    fire_per[i] = label.count();
  });
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    m.samples[i].mask = files[i];
    run.artifact(m.resolve(files[i]));
    fire += fire_per[i];
    pixels += std::size_t{m.samples[i].valid_height} * m.samples[i].valid_width;
  }
  save_manifest(m, a.manifest);
  run.artifact(a.manifest);
  run.write(run_manifest_path(out));
  std::printf("labelled %zu samples, fire fraction %.6f\n", m.samples.size(),
              pixels ? static_cast<double>(fire) / static_cast<double>(pixels) : 0.0);
}

// --- dataset ---------------------------------------------------------------

struct DatasetArgs {
  std::string manifest;
  std::string out;
  bool resplit = false;
  SplitArgs split;
};

void cmd_dataset(const DatasetArgs& a, const Common& c) {
  RunManifest run("dataset", c.argv);
  DatasetManifest m = load_manifest(a.manifest);
  if (a.resplit) {
    run.seed(c.seed.value_or(0));
    assign_splits(m, a.split, c.seed.value_or(0));
  }
  json summary = {{"samples", m.samples.size()}, {"patch", m.patch}, {"splits", json::object()}};
  summary["bands"] = json::array();
  for (BandId b : m.bands) summary["bands"].push_back(band_index(b));
  std::map<std::string, std::pair<std::size_t, std::size_t>> fire;  // split -> (fire px, valid px)
  std::map<std::string, std::size_t> counts;
  std::size_t unlabelled = 0;
  std::vector<std::size_t> fire_px(m.samples.size());
  parallel_for(m.samples.size(), c.workers, [&](std::size_t i) {
    const auto& e = m.samples[i];
    if (e.mask.empty()) return;
    const auto mask = load_mask(m.resolve(e.mask).string());
    std::size_t n = 0;
    for (std::uint32_t r = 0; r < std::min(e.valid_height, mask.height); ++r)
      for (std::uint32_t k = 0; k < std::min(e.valid_width, mask.width); ++k) n += mask.at(r, k);
    fire_px[i] = n;
  });
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const auto& e = m.samples[i];
    counts[e.split]++;
    if (e.mask.empty()) {
      ++unlabelled;
      continue;
    }
    fire[e.split].first += fire_px[i];
    fire[e.split].second += std::size_t{e.valid_height} * e.valid_width;
  }
  for (const auto& [name, n] : counts) {
    json s = {{"samples", n}};
    const auto [f, px] = fire[name];
    s["fire_fraction"] = px ? json(static_cast<double>(f) / static_cast<double>(px)) : json();
    summary["splits"][name] = s;
  }
  summary["unlabelled"] = unlabelled;
  if (!a.out.empty()) {
    save_manifest(m, a.out);
    run.artifact(a.out);
    run.write(run_manifest_path(a.out));
  } else if (a.resplit) {
    save_manifest(m, a.manifest);
    run.artifact(a.manifest);
    run.write(run_manifest_path(a.manifest));
  }
  std::cout << summary.dump(2) << "\n";
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string model;
  std::string train;
  std::string manifest;
  std::string out;
  std::string resume;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> stop_after;
};

json data_json(const DatasetManifest& m) {
  json j = {{"bands", json::array()}, {"normalize", std::string(to_string(m.normalize))}, {"patch", m.patch}};
  for (BandId b : m.bands) j["bands"].push_back(band_index(b));
  return j;
}

std::vector<PatchSample> load_split(const DatasetManifest& m, const std::string& tag, std::size_t workers) {
  return load_samples(m, m.with_split(tag), workers);
}

template <class T>
void check_channels(const models::SegmentationModel<T>& model, const DatasetManifest& m) {
  if (model.in_channels() != m.bands.size())
    throw ShapeError("model takes " + std::to_string(model.in_channels()) + " channels but the dataset has " +
                     std::to_string(m.bands.size()) + " bands");
}

template <class T>
void run_train(const TrainArgs& a, const Common& c) {
  RunManifest run("train", c.argv);
  const fs::path out = a.out;
  fs::create_directories(out);

  std::optional<train::Checkpoint<T>> resume;
  if (!a.resume.empty()) resume = train::load_checkpoint<T>(a.resume);

  json model_cfg;
  if (!a.model.empty()) {
    const auto p = resolve_config(a.model, "models");
    model_cfg = read_json(p);
    run.config(p);
  } else if (resume) {
    model_cfg = resume->model_config;
    run.config_text("checkpoint:model", model_cfg.dump());
  } else {
    throw ConfigError("--model is required unless resuming");
  }
  train::TrainConfig cfg;
  if (!a.train.empty()) {
    const auto p = resolve_config(a.train, "train");
    cfg = train::train_config_from_json(read_json(p));
    run.config(p);
  } else if (resume && !resume->train_config.is_null()) {
    cfg = train::train_config_from_json(resume->train_config);
    run.config_text("checkpoint:train", resume->train_config.dump());
  } else {
    throw ConfigError("--train is required unless resuming");
  }
  if (c.seed) {
    cfg.seed = *c.seed;
    model_cfg["seed"] = *c.seed;
  }
  if (a.epochs) cfg.epochs = *a.epochs;
  cfg.workers = c.workers;
  cfg.validate();
  run.seed(cfg.seed);

  const DatasetManifest m = load_manifest(a.manifest);
  auto model = models::make_model<T>(model_cfg);
  check_channels(*model, m);
  const auto train_samples = load_split(m, "train", c.workers);
  const auto val_samples = load_split(m, "val", c.workers);
  train::Trainer<T> trainer(*model, cfg, train_samples, val_samples);
  if (resume) trainer.resume(*resume);

  write_json(out / "data.json", data_json(m));
  const auto last_dir = out / "checkpoint", best_dir = out / "best";
  auto save_progress = [&] {
    train::save_checkpoint(trainer.checkpoint(), last_dir);
    detail::write_text_atomically(out / "history.csv", train::history_csv(trainer.history()));
    if (trainer.best()) train::save_checkpoint(*trainer.best(), best_dir);
  };
  trainer.on_epoch([&](const train::HistoryRow& r) {
    std::printf("epoch %zu/%zu train_loss %.6f val_loss %.6f val_iou %.4f lr %.3g\n", r.epoch, cfg.epochs,
                r.train_loss, r.val_loss, r.val_iou, r.lr);
    std::fflush(stdout);
    save_progress();
  });
  std::printf("training %s on %zu samples (%zu val), %zu epochs x %zu steps, %zu parameters\n", model->arch().c_str(),
              train_samples.size(), val_samples.size(), cfg.epochs, trainer.steps_per_epoch(),
              models::count_parameters(*model));
  trainer.fit(a.stop_after);
  save_progress();
  for (const auto& p : {out / "data.json", out / "history.csv", last_dir / "manifest.json"}) run.artifact(p);
  if (trainer.best()) run.artifact(best_dir / "manifest.json");
  run.write(out / "run_manifest.json");
}

// --- eval / infer ----------------------------------------------------------

/// A train output directory resolves to its best checkpoint (or the last
/// one); a checkpoint directory is used as is.
fs::path checkpoint_dir(const fs::path& p) {
  if (fs::exists(p / "manifest.json")) return p;
  for (const char* sub : {"best", "checkpoint"})
    if (fs::exists(p / sub / "manifest.json")) return p / sub;
  throw NotFoundError("no checkpoint under " + p.string());
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  double threshold = 0.5;
  std::string out;
  std::string name;
  std::size_t batch = 8;
};

template <class T>
void run_eval(const EvalArgs& a, const Common& c) {
  RunManifest run("eval", c.argv);
  const fs::path out = a.out;
  fs::create_directories(out);
  const auto ck_dir = checkpoint_dir(a.checkpoint);
  run.config(ck_dir / "manifest.json");
  auto model = train::load_model<T>(ck_dir);
  const DatasetManifest m = load_manifest(a.manifest);
  check_channels(*model, m);
  const auto samples = load_split(m, a.split, c.workers);
  if (samples.empty()) throw NotFoundError("split '" + a.split + "' of " + a.manifest + " is empty");
  const auto ev = metrics::evaluate(*model, samples, a.threshold, a.batch, c.workers);

  json report = metrics::to_json(ev.report);
  report["split"] = a.split;
  report["samples"] = samples.size();
  report["aggregation"] = "micro";
  metrics::validate_report_json(report);
  write_json(out / "metrics.json", report);
  const std::string name = a.name.empty() ? model->arch() : a.name;
  const auto table = metrics::format_table({{name, ev.report}});
  detail::write_text_atomically(out / "metrics.txt", table);
  std::string csv = "id,tp,fp,fn,tn\n";
  for (const auto& [id, k] : ev.per_sample)
    csv += id + "," + std::to_string(k.tp) + "," + std::to_string(k.fp) + "," + std::to_string(k.fn) + "," +
           std::to_string(k.tn) + "\n";
  detail::write_text_atomically(out / "per_sample.csv", csv);
  for (const char* f : {"metrics.json", "metrics.txt", "per_sample.csv"}) run.artifact(out / f);
  run.write(out / "run_manifest.json");
  std::cout << table;
}

struct InferArgs {
  std::string checkpoint;
  std::string input;
  std::string out;
  std::string prob_out;
  double threshold = 0.5;
  std::uint32_t tile = 256;
  std::string bands;
  std::string normalize;
  std::size_t batch = 8;
};

template <class T>
void run_infer(const InferArgs& a, const Common& c) {
  RunManifest run("infer", c.argv);
  if (!(a.threshold > 0.0 && a.threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
  const auto ck_dir = checkpoint_dir(a.checkpoint);
  run.config(ck_dir / "manifest.json");
  auto model = train::load_model<T>(ck_dir);

  // band selection: flags, else the training data description, else the default
  std::vector<BandId> bands = kModelBands;
  NormalizePolicy policy = NormalizePolicy::FixedMax;
  for (const auto& p : {ck_dir / "data.json", ck_dir.parent_path() / "data.json"}) {
    if (!fs::exists(p)) continue;
    const auto j = read_json(p);
    bands.clear();
    for (int b : j.at("bands")) bands.push_back(band_from_index(b));
    policy = normalize_policy_from_string(j.value("normalize", std::string("fixed_max")));
    run.config(p);
    break;
  }
  if (!a.bands.empty()) bands = parse_bands(a.bands);
  if (!a.normalize.empty()) policy = normalize_policy_from_string(a.normalize);
  if (model->in_channels() != bands.size())
    throw ShapeError("model takes " + std::to_string(model->in_channels()) + " channels, " +
                     std::to_string(bands.size()) + " bands selected");

  const Scene scene = load_scene(a.input);
  const auto img = normalize(select_bands(scene, bands), policy);
  const std::uint32_t tile = std::min(a.tile, std::max(scene.width(), scene.height()));
  const auto patches = extract_patches(img, FireMask(img.width, img.height), tile);
  const auto probs = predict(*model, patches, a.batch);

  std::vector<double> prob(scene.pixels(), 0.0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& s = patches[i];
    for (std::uint32_t r = 0; r < s.valid_height; ++r)
      for (std::uint32_t k = 0; k < s.valid_width; ++k)
        prob[std::size_t{s.origin.row + r} * scene.width() + s.origin.col + k] =
            static_cast<double>(probs[i][std::size_t{r} * s.width + k]);
  }
  const auto mask = metrics::binarize(prob, scene.width(), scene.height(), a.threshold);
  save_mask(mask, a.out);
  run.artifact(a.out);
  if (!a.prob_out.empty()) {
    // probabilities quantised to 16 bits
    std::vector<std::uint16_t> q(prob.size());
    for (std::size_t i = 0; i < prob.size(); ++i) q[i] = static_cast<std::uint16_t>(std::lround(prob[i] * 65535.0));
    RawRaster r{scene.width(), scene.height(), {0}, {std::move(q)}};
    write_wfr(a.prob_out, r);
    run.artifact(a.prob_out);
  }
  run.write(run_manifest_path(a.out));
  std::printf("%zu of %zu pixels predicted fire\n", mask.count(), mask.pixels());
}

// --- render ----------------------------------------------------------------

struct RenderArgs {
  std::string image;
  std::string truth;
  std::string pred;
  std::string out;
  std::uint32_t margin = 8;
  std::string bands = "7,6,2";
};

void cmd_render(const RenderArgs& a, const Common& c) {
  RunManifest run("render", c.argv);
  const Scene scene = load_scene(a.image);
  const auto truth = load_mask(a.truth), pred = load_mask(a.pred);
  const std::uint32_t w = scene.width(), h = scene.height();
  for (const auto* m : {&truth, &pred})
    if (m->width != w || m->height != h)
      throw ShapeError("mask '" + m->source + "' is " + std::to_string(m->width) + "x" + std::to_string(m->height) +
                       " but the image is " + std::to_string(w) + "x" + std::to_string(h));
  const auto bands = parse_bands(a.bands);
  if (bands.size() != 3) throw ConfigError("render needs exactly 3 bands for R,G,B");

  const std::uint32_t cell = w + a.margin, lead = a.margin / 2;
  png::Image img{3 * cell, h + a.margin, 3, {}};
  img.pixels.assign(std::size_t{img.width} * img.height * 3, 255);
  auto put = [&](std::uint32_t panel, std::uint32_t r, std::uint32_t k, std::array<std::uint8_t, 3> rgb) {
    const std::size_t o = (std::size_t{lead + r} * img.width + panel * cell + lead + k) * 3;
    std::copy(rgb.begin(), rgb.end(), img.pixels.begin() + o);
  };
  std::array<double, 3> peak{};
  for (int ch = 0; ch < 3; ++ch) {
    const auto& p = scene.band(bands[ch]);
    peak[ch] = std::max(1.0, static_cast<double>(*std::max_element(p.begin(), p.end())));
  }
  for (std::uint32_t r = 0; r < h; ++r)
    for (std::uint32_t k = 0; k < w; ++k) {
      std::array<std::uint8_t, 3> rgb{};
      for (int ch = 0; ch < 3; ++ch)
        rgb[ch] = static_cast<std::uint8_t>(std::lround(255.0 * scene.at(bands[ch], r, k) / peak[ch]));
      put(0, r, k, rgb);
      const std::uint8_t t = truth.at(r, k) ? 255 : 0, q = pred.at(r, k) ? 255 : 0;
      put(1, r, k, {t, t, t});
      put(2, r, k, {q, q, q});
    }
  png::write(a.out, img);
  run.artifact(a.out);
  run.write(run_manifest_path(a.out));
  std::printf("wrote %ux%u panel image %s\n", img.width, img.height, a.out.c_str());
}

void print_error(const std::string& command, const char* kind, const std::string& message) {
  json j = {{"error", {{"kind", kind}, {"message", message}, {"command", command}}}};
  std::cerr << j.dump() << "\n";
}

void add_split_options(CLI::App* cmd, SplitArgs& s) {
  cmd->add_option("--train-fraction", s.train_fraction, "share of non-test samples used for training");
  cmd->add_option("--val-fraction", s.val_fraction, "share of non-test samples used for validation");
  cmd->add_option("--test-scene", s.test_scenes, "scene id held out as the test split (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wildfire: fire-mask generation, segmentation training and evaluation"};
  app.require_subcommand(1);
  Common common;
  for (int i = 0; i < argc; ++i) common.argv.push_back(argv[i]);

  auto add_common = [&](CLI::App* cmd, bool seed, bool dtype) {
    cmd->add_option("--workers", common.workers, "worker threads")->check(CLI::PositiveNumber);
    if (seed) cmd->add_option("--seed", common.seed, "overrides the configured seed");
    if (dtype) cmd->add_option("--dtype", common.dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  };

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "write procedural fire scenes");
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--count", synth.count, "number of scenes");
  c_synth->add_option("--size", synth.size, "scene side in pixels");
  c_synth->add_option("--p-empty", synth.p_empty, "chance of a fire-free scene");
  add_common(c_synth, true, false);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "tile a directory of scenes into a dataset manifest");
  c_ingest->add_option("--in", ingest.in_dir, "directory of .tif/.wfr scenes")->required();
  c_ingest->add_option("--out", ingest.out, "manifest path")->required();
  c_ingest->add_option("--patch", ingest.patch, "tile side in pixels");
  c_ingest->add_option("--bands", ingest.bands, "model bands, e.g. 7,6,2");
  c_ingest->add_option("--normalize", ingest.normalize, "fixed_max or per_band_max");
  add_split_options(c_ingest, ingest.split);
  add_common(c_ingest, true, false);

  MaskArgs mask;
  auto* c_mask = app.add_subcommand("mask", "rule masks for a scene or a whole manifest");
  c_mask->add_option("--scene", mask.scene, "scene file");
  c_mask->add_option("--manifest", mask.manifest, "dataset manifest to label in place");
  c_mask->add_option("--rules", mask.rules, "rule files or names (default: every bundled rule)");
  c_mask->add_option("--combiner", mask.combiner, "voting, intersection, union or none");
  c_mask->add_option("--quorum", mask.quorum, "votes needed with the voting combiner");
  c_mask->add_option("--out", mask.out, "output directory");
  add_common(c_mask, false, false);

  DatasetArgs dataset;
  auto* c_dataset = app.add_subcommand("dataset", "summarise or re-split a manifest");
  c_dataset->add_option("--manifest", dataset.manifest, "dataset manifest")->required();
  c_dataset->add_flag("--resplit", dataset.resplit, "assign splits again");
  c_dataset->add_option("--out", dataset.out, "write the (re-split) manifest here");
  add_split_options(c_dataset, dataset.split);
  add_common(c_dataset, true, false);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train a segmentation model");
  c_train->add_option("--model", tr.model, "model config file or name");
  c_train->add_option("--train", tr.train, "train config file or name");
  c_train->add_option("--manifest", tr.manifest, "dataset manifest")->required();
  c_train->add_option("--out", tr.out, "output directory")->required();
  c_train->add_option("--resume", tr.resume, "checkpoint directory to continue from");
  c_train->add_option("--epochs", tr.epochs, "overrides the configured epoch count");
  c_train->add_option("--stop-after", tr.stop_after, "stop once this many epochs are done (resumable)");
  add_common(c_train, true, true);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest split");
  c_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint or train output directory")->required();
  c_eval->add_option("--manifest", ev.manifest, "dataset manifest")->required();
  c_eval->add_option("--split", ev.split, "split tag");
  c_eval->add_option("--threshold", ev.threshold, "binarisation threshold")->check(CLI::Range(0.0, 1.0));
  c_eval->add_option("--out", ev.out, "output directory")->required();
  c_eval->add_option("--name", ev.name, "method name in the table");
  c_eval->add_option("--batch", ev.batch, "inference batch size")->check(CLI::PositiveNumber);
  add_common(c_eval, false, true);

  InferArgs inf;
  auto* c_infer = app.add_subcommand("infer", "predict the fire mask of a scene");
  c_infer->add_option("--checkpoint", inf.checkpoint, "checkpoint or train output directory")->required();
  c_infer->add_option("--input", inf.input, "scene file")->required();
  c_infer->add_option("--out", inf.out, "mask output (.png or .wfr)")->required();
  c_infer->add_option("--prob-out", inf.prob_out, "optional 16-bit probability raster (.wfr)");
  c_infer->add_option("--threshold", inf.threshold, "binarisation threshold");
  c_infer->add_option("--tile", inf.tile, "tile side in pixels");
  c_infer->add_option("--bands", inf.bands, "model bands, e.g. 7,6,2");
  c_infer->add_option("--normalize", inf.normalize, "fixed_max or per_band_max");
  c_infer->add_option("--batch", inf.batch, "inference batch size")->check(CLI::PositiveNumber);
  add_common(c_infer, false, true);

  RenderArgs rd;
  auto* c_render = app.add_subcommand("render", "composite | truth | prediction panel PNG");
  c_render->add_option("--image", rd.image, "scene file")->required();
  c_render->add_option("--truth", rd.truth, "ground-truth mask")->required();
  c_render->add_option("--pred", rd.pred, "predicted mask")->required();
  c_render->add_option("--out", rd.out, "PNG path")->required();
  c_render->add_option("--margin", rd.margin, "gap around each panel in pixels");
  c_render->add_option("--bands", rd.bands, "bands mapped to R,G,B");
  add_common(c_render, false, false);

  std::string command = "wildfire";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    for (auto* sub : app.get_subcommands()) command = sub->get_name();
    print_error(command, "usage", e.what());
    return 64;
  }
  command = app.get_subcommands().front()->get_name();
  const bool f64 = common.dtype == "f64";
  try {
    if (*c_synth) cmd_synth(synth, common);
    else if (*c_ingest) cmd_ingest(ingest, common);
    else if (*c_mask) cmd_mask(mask, common);
    else if (*c_dataset) cmd_dataset(dataset, common);
    else if (*c_train) f64 ? run_train<double>(tr, common) : run_train<float>(tr, common);
    else if (*c_eval) f64 ? run_eval<double>(ev, common) : run_eval<float>(ev, common);
    else if (*c_infer) f64 ? run_infer<double>(inf, common) : run_infer<float>(inf, common);
    else if (*c_render) cmd_render(rd, common);
  } catch (const Error& e) {
    print_error(command, e.kind(), e.what());
    return 2;
  } catch (const fs::filesystem_error& e) {
    print_error(command, "io", e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error(command, "internal", e.what());
    return 3;
  }
  return 0;
}
