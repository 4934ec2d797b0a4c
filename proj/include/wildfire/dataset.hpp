#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "wildfire/error.hpp"
#include "wildfire/firemask.hpp"
#include "wildfire/parallel.hpp"
#include "wildfire/raster_io.hpp"
#include "wildfire/rng.hpp"

namespace wildfire {

struct PatchOrigin {
  std::string scene_id;
  std::uint32_t row = 0;
  std::uint32_t col = 0;
};

/// Aligned image/mask pair. Image is channel-major C×H×W in [0,1], mask is
/// H×W with values 0/1. valid_height/valid_width give the extent of real
/// scene data; anything beyond is padding.
struct PatchSample {
  std::string id;
  PatchOrigin origin;
  std::string split;  ///< manifest split tag, empty when not loaded from a manifest
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t valid_height = 0;
  std::uint32_t valid_width = 0;
  std::vector<float> image;
  std::vector<std::uint8_t> mask;

  std::size_t plane() const { return std::size_t{height} * width; }
  float& pixel(std::size_t c, std::uint32_t r, std::uint32_t col) { return image[c * plane() + std::size_t{r} * width + col]; }
  float pixel(std::size_t c, std::uint32_t r, std::uint32_t col) const {
    return image[c * plane() + std::size_t{r} * width + col];
  }
  std::uint8_t label(std::uint32_t r, std::uint32_t c) const { return mask[std::size_t{r} * width + c]; }

  friend bool operator==(const PatchSample& a, const PatchSample& b) {
    return a.channels == b.channels && a.height == b.height && a.width == b.width && a.image == b.image &&
           a.mask == b.mask;
  }
};

inline const std::string& sample_id(const PatchSample& s) { return s.id; }

inline std::string make_sample_id(const std::string& scene_id, std::uint32_t row, std::uint32_t col) {
  return scene_id + "_r" + std::to_string(row) + "_c" + std::to_string(col);
}

// ---------------------------------------------------------------------------
// Tiling
// ---------------------------------------------------------------------------

struct TileOrigin {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
};

/// Row-major origins of non-overlapping size×size tiles covering the raster.
inline std::vector<TileOrigin> tile_grid(std::uint32_t height, std::uint32_t width, std::uint32_t size) {
  if (size < 1) throw ConfigError("tile size must be at least 1");
  std::vector<TileOrigin> out;
  for (std::uint32_t r = 0; r < height; r += size)
    for (std::uint32_t c = 0; c < width; c += size) out.push_back({r, c});
  return out;
}

/// Tiles with zero padding at the right/bottom edges.
inline std::vector<PatchSample> extract_patches(const NormalizedImage& image, const FireMask& mask,
                                                std::uint32_t size) {
  if (size < 1) throw ConfigError("patch size must be at least 1");
  if (image.width != mask.width || image.height != mask.height)
    throw ShapeError("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                     " but mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height));
  const auto channels = static_cast<std::uint32_t>(image.channels.size());
  std::vector<PatchSample> out;
  for (auto [r0, c0] : tile_grid(image.height, image.width, size)) {
    PatchSample s;
    s.origin = {image.scene_id, r0, c0};
    s.id = make_sample_id(image.scene_id, r0, c0);
    s.channels = channels;
    s.height = s.width = size;
    s.valid_height = std::min(size, image.height - r0);
    s.valid_width = std::min(size, image.width - c0);
    s.image.assign(std::size_t{channels} * size * size, 0.0f);
    s.mask.assign(std::size_t{size} * size, 0);
    for (std::uint32_t r = 0; r < s.valid_height; ++r) {
      for (std::uint32_t c = 0; c < s.valid_width; ++c) {
        for (std::uint32_t ch = 0; ch < channels; ++ch) s.pixel(ch, r, c) = image.at(ch, r0 + r, c0 + c);
        s.mask[std::size_t{r} * size + c] = mask.at(r0 + r, c0 + c);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Cuts a size×size window out of a scene, zero padded past the edge.
inline Scene scene_window(const Scene& scene, std::uint32_t row, std::uint32_t col, std::uint32_t size) {
  std::vector<std::vector<std::uint16_t>> planes;
  for (std::size_t b = 0; b < scene.bands().size(); ++b) {
    std::vector<std::uint16_t> p(std::size_t{size} * size, 0);
    const auto& src = scene.plane(b);
    for (std::uint32_t r = 0; r < size && row + r < scene.height(); ++r)
      for (std::uint32_t c = 0; c < size && col + c < scene.width(); ++c)
        p[std::size_t{r} * size + c] = src[std::size_t{row + r} * scene.width() + col + c];
    planes.push_back(std::move(p));
  }
  return Scene(size, size, scene.bands(), std::move(planes), make_sample_id(scene.scene_id(), row, col));
}

inline FireMask mask_window(const FireMask& mask, std::uint32_t row, std::uint32_t col, std::uint32_t size) {
  FireMask out(size, size, mask.source);
  for (std::uint32_t r = 0; r < size && row + r < mask.height; ++r)
    for (std::uint32_t c = 0; c < size && col + c < mask.width; ++c)
      out.bits[std::size_t{r} * size + c] = mask.at(row + r, col + c);
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
  double p_flip = 0.5;
  double p_rotate = 0.5;
  double p_shear = 0.2;
  double p_erase = 0.2;
  double shear_max = 0.2;   ///< shear factor drawn uniformly from [-shear_max, shear_max]
  double erase_min = 0.02;  ///< erased area fraction lower bound
  double erase_max = 0.10;  ///< erased area fraction upper bound
  std::uint32_t crop = 224;
  std::uint64_t seed = 0;

  void validate(std::uint32_t patch_side = 0) const {
    for (double p : {p_flip, p_rotate, p_shear, p_erase})
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augmentation probabilities must lie in [0,1]");
    if (!(shear_max >= 0.0)) throw ConfigError("shear_max must be non-negative");
    if (!(erase_min > 0.0 && erase_min <= erase_max && erase_max <= 1.0))
      throw ConfigError("erase area fractions must satisfy 0 < min <= max <= 1");
    if (crop < 1) throw ConfigError("crop must be at least 1");
    if (patch_side && crop > patch_side)
      throw ConfigError("crop " + std::to_string(crop) + " exceeds patch side " + std::to_string(patch_side));
  }

  /// Everything disabled, full-size crop.
  static AugmentConfig identity(std::uint32_t crop) {
    AugmentConfig c;
    c.p_flip = c.p_rotate = c.p_shear = c.p_erase = 0.0;
    c.crop = crop;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = {{"p_flip", c.p_flip},       {"p_rotate", c.p_rotate}, {"p_shear", c.p_shear},
       {"p_erase", c.p_erase},     {"shear_max", c.shear_max}, {"erase_min", c.erase_min},
       {"erase_max", c.erase_max}, {"crop", c.crop},         {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, AugmentConfig& c) {
  AugmentConfig d;
  c.p_flip = j.value("p_flip", d.p_flip);
  c.p_rotate = j.value("p_rotate", d.p_rotate);
  c.p_shear = j.value("p_shear", d.p_shear);
  c.p_erase = j.value("p_erase", d.p_erase);
  c.shear_max = j.value("shear_max", d.shear_max);
  c.erase_min = j.value("erase_min", d.erase_min);
  c.erase_max = j.value("erase_max", d.erase_max);
  c.crop = j.value("crop", d.crop);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

enum class Axis { Horizontal, Vertical };

struct EraseRect {
  std::uint32_t top = 0, left = 0, height = 0, width = 0;
};

/// Record of the random choices made by one augment() call.
struct AugmentTrace {
  std::optional<Axis> flip;
  int quarter_turns = 0;  ///< clockwise 90° turns, 0..3
  std::optional<Axis> shear_axis;
  double shear_factor = 0.0;
  std::optional<EraseRect> erase;
};

namespace transform {

/// Horizontal flip mirrors columns, vertical flip mirrors rows.
template <class T>
void flip(std::vector<T>& plane_data, std::size_t planes, std::uint32_t h, std::uint32_t w, Axis axis) {
  for (std::size_t p = 0; p < planes; ++p) {
    T* d = plane_data.data() + p * std::size_t{h} * w;
    if (axis == Axis::Horizontal) {
      for (std::uint32_t r = 0; r < h; ++r) std::reverse(d + std::size_t{r} * w, d + std::size_t{r + 1} * w);
    } else {
      for (std::uint32_t r = 0; r < h / 2; ++r)
        std::swap_ranges(d + std::size_t{r} * w, d + std::size_t{r + 1} * w, d + std::size_t{h - 1 - r} * w);
    }
  }
}

/// One clockwise quarter turn; output is w×h.
template <class T>
std::vector<T> rotate90(const std::vector<T>& in, std::size_t planes, std::uint32_t h, std::uint32_t w) {
  std::vector<T> out(in.size());
  const std::size_t plane = std::size_t{h} * w;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::uint32_t r = 0; r < w; ++r)      // output rows
      for (std::uint32_t c = 0; c < h; ++c)    // output cols
        out[p * plane + std::size_t{r} * h + c] = in[p * plane + std::size_t{h - 1 - c} * w + r];
  return out;
}

/// Axis-aligned shear about the centre with nearest-neighbour sampling.
/// Horizontal: out(r, c) = in(r, c - f (r - cy)); vertical analogous.
/// Samples falling outside the raster become zero.
template <class T>
std::vector<T> shear(const std::vector<T>& in, std::size_t planes, std::uint32_t h, std::uint32_t w, Axis axis,
                     double f) {
  std::vector<T> out(in.size(), T{});
  const std::size_t plane = std::size_t{h} * w;
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  for (std::uint32_t r = 0; r < h; ++r) {
    for (std::uint32_t c = 0; c < w; ++c) {
      long sr = r, sc = c;
      if (axis == Axis::Horizontal)
        sc = static_cast<long>(std::floor(c - f * (r - cy) + 0.5));
      else
        sr = static_cast<long>(std::floor(r - f * (c - cx) + 0.5));
      if (sr < 0 || sc < 0 || sr >= static_cast<long>(h) || sc >= static_cast<long>(w)) continue;
      for (std::size_t p = 0; p < planes; ++p)
        out[p * plane + std::size_t{r} * w + c] = in[p * plane + static_cast<std::size_t>(sr) * w + sc];
    }
  }
  return out;
}

template <class T>
std::vector<T> window(const std::vector<T>& in, std::size_t planes, std::uint32_t h, std::uint32_t w,
                      std::uint32_t top, std::uint32_t left, std::uint32_t out_h, std::uint32_t out_w) {
  std::vector<T> out(planes * std::size_t{out_h} * out_w);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::uint32_t r = 0; r < out_h; ++r)
      std::copy_n(in.begin() + p * std::size_t{h} * w + std::size_t{top + r} * w + left, out_w,
                  out.begin() + p * std::size_t{out_h} * out_w + std::size_t{r} * out_w);
  return out;
}

}  // namespace transform

inline void flip(PatchSample& s, Axis axis) {
  transform::flip(s.image, s.channels, s.height, s.width, axis);
  transform::flip(s.mask, 1, s.height, s.width, axis);
}

inline void rotate90(PatchSample& s, int quarter_turns) {
  quarter_turns = ((quarter_turns % 4) + 4) % 4;
  for (int i = 0; i < quarter_turns; ++i) {
    s.image = transform::rotate90(s.image, s.channels, s.height, s.width);
    s.mask = transform::rotate90(s.mask, 1, s.height, s.width);
    std::swap(s.height, s.width);
    std::swap(s.valid_height, s.valid_width);
  }
}

inline void shear(PatchSample& s, Axis axis, double factor) {
  s.image = transform::shear(s.image, s.channels, s.height, s.width, axis, factor);
  s.mask = transform::shear(s.mask, 1, s.height, s.width, axis, factor);
}

/// Fills the rectangle of the image with uniform noise and zeroes the mask there.
inline void erase(PatchSample& s, const EraseRect& rect, Rng& rng) {
  for (std::uint32_t ch = 0; ch < s.channels; ++ch)
    for (std::uint32_t r = rect.top; r < rect.top + rect.height; ++r)
      for (std::uint32_t c = rect.left; c < rect.left + rect.width; ++c)
        s.pixel(ch, r, c) = static_cast<float>(rng.uniform());
  for (std::uint32_t r = rect.top; r < rect.top + rect.height; ++r)
    for (std::uint32_t c = rect.left; c < rect.left + rect.width; ++c) s.mask[std::size_t{r} * s.width + c] = 0;
}

/// Random flip (p_flip, axis by coin flip), right-angle rotation (p_rotate,
/// 90/180/270 uniform), shear (p_shear) and erase (p_erase), in that order.
/// The same spatial transform is applied to image and mask.
inline PatchSample augment(PatchSample sample, const AugmentConfig& cfg, Rng& rng, AugmentTrace* trace = nullptr) {
  AugmentTrace t;
  if (rng.bernoulli(cfg.p_flip)) {
    t.flip = rng.bernoulli(0.5) ? Axis::Horizontal : Axis::Vertical;
    flip(sample, *t.flip);
  }
  if (rng.bernoulli(cfg.p_rotate)) {
    t.quarter_turns = 1 + static_cast<int>(rng.below(3));
    rotate90(sample, t.quarter_turns);
  }
  if (rng.bernoulli(cfg.p_shear)) {
    t.shear_axis = rng.bernoulli(0.5) ? Axis::Horizontal : Axis::Vertical;
    t.shear_factor = rng.uniform(-cfg.shear_max, cfg.shear_max);
    shear(sample, *t.shear_axis, t.shear_factor);
  }
  if (rng.bernoulli(cfg.p_erase)) {
    const double area = rng.uniform(cfg.erase_min, cfg.erase_max) * sample.height * sample.width;
    const double ratio = std::exp(rng.uniform(std::log(0.3), std::log(1.0 / 0.3)));
    EraseRect rect;
    rect.height = static_cast<std::uint32_t>(
        std::clamp(std::floor(std::sqrt(area * ratio) + 0.5), 1.0, static_cast<double>(sample.height)));
    rect.width = static_cast<std::uint32_t>(
        std::clamp(std::floor(std::sqrt(area / ratio) + 0.5), 1.0, static_cast<double>(sample.width)));
    rect.top = static_cast<std::uint32_t>(rng.below(sample.height - rect.height + 1));
    rect.left = static_cast<std::uint32_t>(rng.below(sample.width - rect.width + 1));
    erase(sample, rect, rng);
    t.erase = rect;
  }
  if (trace) *trace = t;
  return sample;
}

inline PatchSample crop_at(const PatchSample& s, std::uint32_t top, std::uint32_t left, std::uint32_t crop) {
  PatchSample out;
  out.id = s.id;
  out.origin = s.origin;
  out.split = s.split;
  out.channels = s.channels;
  out.height = out.width = crop;
  out.valid_height = s.valid_height > top ? std::min(crop, s.valid_height - top) : 0;
  out.valid_width = s.valid_width > left ? std::min(crop, s.valid_width - left) : 0;
  out.image = transform::window(s.image, s.channels, s.height, s.width, top, left, crop, crop);
  out.mask = transform::window(s.mask, 1, s.height, s.width, top, left, crop, crop);
  return out;
}

inline void check_crop(const PatchSample& s, std::uint32_t crop) {
  if (crop < 1 || crop > s.height || crop > s.width)
    throw ConfigError("crop " + std::to_string(crop) + " does not fit a " + std::to_string(s.height) + "x" +
                      std::to_string(s.width) + " patch");
}

/// Uniformly positioned crop×crop window.
inline PatchSample random_crop(const PatchSample& s, std::uint32_t crop, Rng& rng) {
  check_crop(s, crop);
  const auto top = static_cast<std::uint32_t>(rng.below(s.height - crop + 1));
  const auto left = static_cast<std::uint32_t>(rng.below(s.width - crop + 1));
  return crop_at(s, top, left, crop);
}

/// Window at offset floor((side - crop) / 2).
inline PatchSample center_crop(const PatchSample& s, std::uint32_t crop) {
  check_crop(s, crop);
  return crop_at(s, (s.height - crop) / 2, (s.width - crop) / 2, crop);
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitSpec {
  double train_fraction = 0.8;
  double val_fraction = 0.2;
  std::vector<std::string> test_ids;

  void validate() const {
    if (!(train_fraction > 0.0) || !(val_fraction >= 0.0) || train_fraction + val_fraction > 1.0 + 1e-12)
      throw ConfigError("split fractions must be positive and sum to at most 1");
  }
};

template <class Item>
struct Partition {
  std::vector<Item> train;
  std::vector<Item> val;
  std::vector<Item> test;
};

/// Held-out ids go to test verbatim; the rest is shuffled with `seed` and
/// cut into round(train·n) training and round(val·n) validation items, where
/// n counts the non-test items.
template <class Item>
Partition<Item> split(const std::vector<Item>& items, const SplitSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < items.size(); ++i) by_id.emplace(sample_id(items[i]), i);

  Partition<Item> out;
  std::set<std::size_t> held;
  for (const auto& id : spec.test_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw NotFoundError("held-out sample id not found: " + id);
    if (held.insert(it->second).second) out.test.push_back(items[it->second]);
  }
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (!held.count(i)) rest.push_back(i);
  Rng rng = Rng::stream(seed, 0x5350'4C49'54ULL);
  rng.shuffle(rest.begin(), rest.end());

  const auto n = static_cast<double>(rest.size());
  const std::size_t n_train = std::min(rest.size(), static_cast<std::size_t>(std::llround(spec.train_fraction * n)));
  const std::size_t n_val =
      std::min(rest.size() - n_train, static_cast<std::size_t>(std::llround(spec.val_fraction * n)));
  for (std::size_t i = 0; i < n_train; ++i) out.train.push_back(items[rest[i]]);
  for (std::size_t i = n_train; i < n_train + n_val; ++i) out.val.push_back(items[rest[i]]);
  return out;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Serves augmented, cropped batches. Within an epoch every sample is drawn
/// once (the last batch may be short). The epoch order is a shuffle seeded by
/// (seed, epoch); each sample's augmentation uses the stream
/// (augment.seed, epoch, sample index), so output depends only on the seeds,
/// the epoch and the position, never on the worker count.
class BatchStream {
 public:
  BatchStream(const std::vector<PatchSample>& samples, std::size_t batch_size, AugmentConfig augment,
              std::uint64_t shuffle_seed, std::size_t workers = 1)
      : samples_(&samples), batch_size_(batch_size), augment_(augment), seed_(shuffle_seed), workers_(workers) {
    if (samples.empty()) throw ConfigError("cannot batch an empty split");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    for (const auto& s : samples) augment_.validate(std::min(s.height, s.width));
    reorder();
  }

  std::size_t batches_per_epoch() const { return (samples_->size() + batch_size_ - 1) / batch_size_; }
  std::uint64_t epoch() const { return epoch_; }
  std::size_t cursor() const { return cursor_; }

  void seek(std::uint64_t epoch, std::size_t cursor) {
    epoch_ = epoch;
    cursor_ = cursor;
    reorder();
  }

  /// Sample indices of the current epoch in draw order.
  const std::vector<std::size_t>& order() const { return order_; }

  std::vector<PatchSample> next() {
    if (cursor_ >= order_.size()) seek(epoch_ + 1, 0);
    const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
    std::vector<PatchSample> batch(end - cursor_);
    const std::size_t first = cursor_;
    parallel_for(batch.size(), workers_, [&](std::size_t k) {
      const std::size_t idx = order_[first + k];
      Rng rng = Rng::stream(augment_.seed, epoch_, idx);
      batch[k] = random_crop(augment((*samples_)[idx], augment_, rng), augment_.crop, rng);
    });
    cursor_ = end;
    return batch;
  }

 private:
  void reorder() {
    order_.resize(samples_->size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    Rng rng = Rng::stream(seed_, epoch_, ~std::uint64_t{0});
    rng.shuffle(order_.begin(), order_.end());
  }

  const std::vector<PatchSample>* samples_;
  std::size_t batch_size_;
  AugmentConfig augment_;
  std::uint64_t seed_;
  std::size_t workers_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

/// One batch drawn from a fresh stream at the given epoch.
inline std::vector<PatchSample> sample_batch(const std::vector<PatchSample>& split_samples, std::size_t batch_size,
                                             const AugmentConfig& cfg, std::uint64_t seed, std::uint64_t epoch = 0) {
  BatchStream stream(split_samples, batch_size, cfg, seed);
  stream.seek(epoch, 0);
  return stream.next();
}

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::string image;  ///< path to a .wfr/.tif patch of raw digital numbers
  std::string mask;   ///< path to a mask file; empty until masks exist
  std::string split = "train";  ///< train | val | test | unassigned
  std::string scene_id;
  std::uint32_t row = 0, col = 0;
  std::uint32_t valid_height = 0, valid_width = 0;
};

inline const std::string& sample_id(const ManifestEntry& e) { return e.id; }

struct DatasetManifest {
  std::vector<BandId> bands = kModelBands;
  NormalizePolicy normalize = NormalizePolicy::FixedMax;
  std::uint32_t patch = 256;
  std::vector<ManifestEntry> samples;
  std::filesystem::path base_dir;  ///< directory relative paths resolve against

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  std::vector<ManifestEntry> with_split(const std::string& tag) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : samples)
      if (e.split == tag) out.push_back(e);
    return out;
  }
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["format"] = "wildfire-dataset-1";
  j["bands"] = nlohmann::json::array();
  for (BandId b : m.bands) j["bands"].push_back(band_index(b));
  j["normalize"] = std::string(to_string(m.normalize));
  j["patch"] = m.patch;
  j["samples"] = nlohmann::json::array();
  for (const auto& e : m.samples)
    j["samples"].push_back({{"id", e.id},
                            {"image", e.image},
                            {"mask", e.mask},
                            {"split", e.split},
                            {"scene_id", e.scene_id},
                            {"row", e.row},
                            {"col", e.col},
                            {"valid_height", e.valid_height},
                            {"valid_width", e.valid_width}});
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j, std::filesystem::path base_dir) {
  try {
    DatasetManifest m;
    m.base_dir = std::move(base_dir);
    m.bands.clear();
    for (int b : j.at("bands")) m.bands.push_back(band_from_index(b));
    m.normalize = normalize_policy_from_string(j.value("normalize", std::string("fixed_max")));
    m.patch = j.value("patch", 256u);
    for (const auto& s : j.at("samples")) {
      ManifestEntry e;
      e.id = s.at("id").get<std::string>();
      e.image = s.at("image").get<std::string>();
      e.mask = s.value("mask", std::string{});
      e.split = s.value("split", std::string("train"));
      e.scene_id = s.value("scene_id", std::string{});
      e.row = s.value("row", 0u);
      e.col = s.value("col", 0u);
      e.valid_height = s.value("valid_height", m.patch);
      e.valid_width = s.value("valid_width", m.patch);
      m.samples.push_back(std::move(e));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed dataset manifest: ") + e.what());
  }
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path + " is not valid JSON: " + e.what());
  }
  return manifest_from_json(j, std::filesystem::absolute(path).parent_path());
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  detail::write_text_atomically(path, manifest_to_json(m).dump(2) + "\n");
}

/// Reads one manifest entry into a normalized sample.
inline PatchSample load_sample(const DatasetManifest& m, const ManifestEntry& e) {
  const Scene raw = load_scene(m.resolve(e.image).string());
  const NormalizedImage img = normalize(select_bands(raw, m.bands), m.normalize);
  PatchSample s;
  s.id = e.id;
  s.origin = {e.scene_id, e.row, e.col};
  s.split = e.split;
  s.channels = static_cast<std::uint32_t>(img.channels.size());
  s.height = img.height;
  s.width = img.width;
  s.valid_height = std::min(e.valid_height, img.height);
  s.valid_width = std::min(e.valid_width, img.width);
  for (const auto& ch : img.data) s.image.insert(s.image.end(), ch.begin(), ch.end());
  if (e.mask.empty()) throw NotFoundError("sample '" + e.id + "' has no mask yet");
  const FireMask mask = load_mask(m.resolve(e.mask).string());
  if (mask.width != img.width || mask.height != img.height)
    throw ShapeError("mask of sample '" + e.id + "' does not match its image");
  s.mask = mask.bits;
  return s;
}

inline std::vector<PatchSample> load_samples(const DatasetManifest& m, const std::vector<ManifestEntry>& entries,
                                             std::size_t workers = 1) {
  std::vector<PatchSample> out(entries.size());
  parallel_for(entries.size(), workers, [&](std::size_t i) { out[i] = load_sample(m, entries[i]); });
  return out;
}

}  // namespace wildfire
