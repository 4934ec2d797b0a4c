#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "wildfire/dataset.hpp"
#include "wildfire/firemask.hpp"
#include "wildfire/raster_io.hpp"
#include "wildfire/rng.hpp"

namespace wildfire::synthetic {

/// Procedural scenes: a smooth, noisy land background with a few bright
/// "fire blobs". Inside a blob SWIR2 rises sharply, SWIR1 less, and NIR
/// drops, so blob cores pass every bundled example rule while the soft
/// edges make the rules disagree.
struct SceneConfig {
  std::uint32_t width = 256;
  std::uint32_t height = 256;
  std::uint32_t min_fires = 1;
  std::uint32_t max_fires = 4;
  double min_radius = 3.0;
  double max_radius = 10.0;
  double p_empty = 0.1;  ///< chance that a scene holds no fire at all
  double noise = 250.0;  ///< per-pixel DN noise (standard deviation)

  void validate() const {
    if (width == 0 || height == 0) throw ConfigError("synthetic scene needs a positive extent");
    if (min_fires > max_fires) throw ConfigError("min_fires exceeds max_fires");
    if (!(min_radius > 0.0 && min_radius <= max_radius)) throw ConfigError("bad synthetic blob radius range");
    if (!(p_empty >= 0.0 && p_empty <= 1.0)) throw ConfigError("p_empty must lie in [0,1]");
    if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
  }
};

/// OLI bands 1..7 with digital numbers in the 16-bit range.
inline Scene make_scene(const SceneConfig& cfg, std::uint64_t seed, const std::string& scene_id) {
  cfg.validate();
  Rng rng = Rng::stream(seed, 0x53594E54ULL);
  const std::size_t n = std::size_t{cfg.width} * cfg.height;

  // per-band background level and amplitude of a low-frequency texture
  struct Level {
    double base, texture;
  };
  const Level levels[7] = {{9500, 600}, {8800, 700}, {8400, 800}, {8000, 900}, {15000, 2000}, {9000, 1200}, {7000, 900}};
  const double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0), phase = rng.uniform(0.0, 6.283);

  struct Blob {
    double r, c, radius, strength;
  };
  std::vector<Blob> blobs;
  if (!rng.bernoulli(cfg.p_empty)) {
    const auto count = cfg.min_fires + static_cast<std::uint32_t>(rng.below(cfg.max_fires - cfg.min_fires + 1));
    for (std::uint32_t i = 0; i < count; ++i)
      blobs.push_back({rng.uniform(0.0, cfg.height), rng.uniform(0.0, cfg.width),
                       rng.uniform(cfg.min_radius, cfg.max_radius), rng.uniform(0.8, 1.2)});
  }

  std::vector<std::vector<std::uint16_t>> planes(7, std::vector<std::uint16_t>(n));
  for (std::uint32_t r = 0; r < cfg.height; ++r) {
    for (std::uint32_t c = 0; c < cfg.width; ++c) {
      const double u = static_cast<double>(c) / cfg.width, v = static_cast<double>(r) / cfg.height;
      const double texture = std::sin(6.283 * fx * u + phase) * std::cos(6.283 * fy * v);
      double heat = 0;  // 1 at a blob centre, falling off smoothly
      for (const auto& b : blobs) {
        const double d2 = ((r - b.r) * (r - b.r) + (c - b.c) * (c - b.c)) / (b.radius * b.radius);
        heat = std::max(heat, b.strength * std::exp(-d2));
      }
      double dn[7];
      for (int k = 0; k < 7; ++k) dn[k] = levels[k].base + levels[k].texture * texture + cfg.noise * rng.normal();
      dn[6] += 32000.0 * heat;  // SWIR2
      dn[5] += 14000.0 * heat;  // SWIR1
      dn[4] -= 8000.0 * heat;   // NIR
      dn[1] += 600.0 * heat;    // Blue (smoke haze)
      const std::size_t p = std::size_t{r} * cfg.width + c;
      for (int k = 0; k < 7; ++k) planes[k][p] = static_cast<std::uint16_t>(std::clamp(std::lround(dn[k]), 0L, 65535L));
    }
  }
  std::vector<BandId> ids;
  for (int b = 1; b <= 7; ++b) ids.push_back(band_from_index(b));
  return Scene(cfg.width, cfg.height, std::move(ids), std::move(planes), scene_id);
}

/// Ground truth of a synthetic scene: majority vote of the bundled example rules.
inline FireMask reference_mask(const Scene& scene) {
  std::vector<FireMask> masks;
  for (const auto& rule : example_rules()) masks.push_back(eval_rule(scene, rule));
  return combine_voting(masks);
}

/// Model-ready samples (SWIR2, SWIR1, Blue, fixed-max normalization) of
/// size×size synthetic scenes labelled with reference_mask().
inline std::vector<PatchSample> make_samples(std::size_t count, std::uint32_t size, std::uint64_t seed,
                                             SceneConfig cfg = {}) {
  cfg.width = cfg.height = size;
  std::vector<PatchSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string id = "synth" + std::to_string(i);
    const Scene scene = make_scene(cfg, Rng::stream(seed, i)(), id);
    auto patches = extract_patches(normalize(select_bands(scene, kModelBands)), reference_mask(scene), size);
    patches.front().id = id;
    out.push_back(std::move(patches.front()));
  }
  return out;
}

}  // namespace wildfire::synthetic
