#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "wildfire/error.hpp"
#include "wildfire/tiff.hpp"

namespace wildfire {

/// Landsat-8 OLI/TIRS band numbers.
enum class BandId : std::uint8_t {
  Coastal = 1,
  Blue = 2,
  Green = 3,
  Red = 4,
  NIR = 5,
  SWIR1 = 6,
  SWIR2 = 7,
  Pan = 8,
  Cirrus = 9,
  TIRS1 = 10,
  TIRS2 = 11,
};

inline constexpr std::array<std::string_view, 11> kBandNames = {
    "Coastal", "Blue", "Green", "Red", "NIR", "SWIR1", "SWIR2", "Pan", "Cirrus", "TIRS1", "TIRS2"};

inline constexpr int band_index(BandId b) { return static_cast<int>(b); }

inline BandId band_from_index(int index) {
  if (index < 1 || index > 11) throw ConfigError("band index out of range 1..11: " + std::to_string(index));
  return static_cast<BandId>(index);
}

inline std::string_view band_name(BandId b) { return kBandNames[band_index(b) - 1]; }

inline BandId band_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kBandNames.size(); ++i)
    if (kBandNames[i] == name) return static_cast<BandId>(i + 1);
  throw ConfigError("unknown band name: " + std::string(name));
}

/// The three channels fed to the segmentation models: SWIR2, SWIR1, Blue.
inline const std::vector<BandId> kModelBands = {BandId::SWIR2, BandId::SWIR1, BandId::Blue};

/// Multiband raster of raw 16-bit digital numbers. Immutable after
/// construction.
class Scene {
 public:
  Scene(std::uint32_t width, std::uint32_t height, std::vector<BandId> bands,
        std::vector<std::vector<std::uint16_t>> data, std::string scene_id = {})
      : width_(width), height_(height), bands_(std::move(bands)), data_(std::move(data)),
        scene_id_(std::move(scene_id)) {
    if (width_ == 0 || height_ == 0) throw ShapeError("scene has zero extent");
    if (bands_.empty()) throw ShapeError("scene needs at least one band");
    if (bands_.size() != data_.size()) throw ShapeError("band list and band data disagree in length");
    for (std::size_t i = 0; i < bands_.size(); ++i) {
      if (data_[i].size() != std::size_t{width_} * height_)
        throw ShapeError("band " + std::to_string(band_index(bands_[i])) + " has wrong pixel count");
      for (std::size_t j = 0; j < i; ++j)
        if (bands_[j] == bands_[i]) throw ConfigError("duplicate band " + std::to_string(band_index(bands_[i])));
    }
  }

  std::uint32_t width() const { return width_; }
  std::uint32_t height() const { return height_; }
  std::size_t pixels() const { return std::size_t{width_} * height_; }
  const std::vector<BandId>& bands() const { return bands_; }
  const std::string& scene_id() const { return scene_id_; }

  bool has_band(BandId b) const { return std::find(bands_.begin(), bands_.end(), b) != bands_.end(); }

  const std::vector<std::uint16_t>& band(BandId b) const {
    auto it = std::find(bands_.begin(), bands_.end(), b);
    if (it == bands_.end()) throw NotFoundError("scene has no band " + std::to_string(band_index(b)));
    return data_[static_cast<std::size_t>(it - bands_.begin())];
  }
  const std::vector<std::uint16_t>& plane(std::size_t i) const { return data_.at(i); }
  std::uint16_t at(BandId b, std::uint32_t row, std::uint32_t col) const {
    return band(b)[std::size_t{row} * width_ + col];
  }

  friend bool operator==(const Scene& a, const Scene& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.bands_ == b.bands_ && a.data_ == b.data_;
  }

 private:
  std::uint32_t width_;
  std::uint32_t height_;
  std::vector<BandId> bands_;
  std::vector<std::vector<std::uint16_t>> data_;
  std::string scene_id_;
};

enum class NormalizePolicy { FixedMax, PerBandMax };

inline NormalizePolicy normalize_policy_from_string(std::string_view s) {
  if (s == "fixed_max") return NormalizePolicy::FixedMax;
  if (s == "per_band_max") return NormalizePolicy::PerBandMax;
  throw ConfigError("unknown normalization policy: " + std::string(s));
}

inline std::string_view to_string(NormalizePolicy p) {
  return p == NormalizePolicy::FixedMax ? "fixed_max" : "per_band_max";
}

/// Channels of reals in [0,1], channel-major.
struct NormalizedImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<BandId> channels;
  std::vector<std::vector<float>> data;
  std::string scene_id;

  std::size_t pixels() const { return std::size_t{width} * height; }
  float at(std::size_t c, std::uint32_t row, std::uint32_t col) const {
    return data[c][std::size_t{row} * width + col];
  }
};

/// Scene holding exactly `wanted` in that order.
inline Scene select_bands(const Scene& scene, const std::vector<BandId>& wanted) {
  std::vector<std::vector<std::uint16_t>> data;
  data.reserve(wanted.size());
  for (BandId b : wanted) data.push_back(scene.band(b));
  return Scene(scene.width(), scene.height(), wanted, std::move(data), scene.scene_id());
}

inline NormalizedImage normalize(const Scene& scene, NormalizePolicy policy = NormalizePolicy::FixedMax) {
  NormalizedImage out;
  out.width = scene.width();
  out.height = scene.height();
  out.channels = scene.bands();
  out.scene_id = scene.scene_id();
  for (std::size_t i = 0; i < scene.bands().size(); ++i) {
    const auto& src = scene.plane(i);
    double scale = 65535.0;
    if (policy == NormalizePolicy::PerBandMax) scale = *std::max_element(src.begin(), src.end());
    std::vector<float> ch(src.size(), 0.0f);
    if (scale > 0)
      for (std::size_t p = 0; p < src.size(); ++p) ch[p] = static_cast<float>(src[p] / scale);
    out.data.push_back(std::move(ch));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raw container (.wfr)
//
//   offset 0   char[4]  "WFR1"
//          4   u32      width
//          8   u32      height
//         12   u32      band count B
//         16   u16[B]   band ids (0 = mask plane, 1..11 = Landsat band)
//    16 + 2B   u16[B][height][width] row-major planes
//
// All integers little-endian.
// ---------------------------------------------------------------------------

struct RawRaster {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint16_t> ids;
  std::vector<std::vector<std::uint16_t>> planes;
};

inline constexpr std::array<char, 4> kWfrMagic = {'W', 'F', 'R', '1'};

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v & 0xFF));
  out.push_back(std::uint8_t(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xFF));
}
inline std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return std::uint32_t(b[off]) | (std::uint32_t(b[off + 1]) << 8) | (std::uint32_t(b[off + 2]) << 16) |
         (std::uint32_t(b[off + 3]) << 24);
}
inline std::uint16_t get_u16(const std::vector<std::uint8_t>& b, std::size_t off) {
  return std::uint16_t(b[off] | (b[off + 1] << 8));
}

/// Writes to a sibling temporary and renames, so readers never see a
/// partially written file.
inline void write_atomically(const std::filesystem::path& path, const void* data, std::size_t size) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline void write_text_atomically(const std::filesystem::path& path, const std::string& text) {
  write_atomically(path, text.data(), text.size());
}

}  // namespace detail

inline void write_wfr(const std::string& path, const RawRaster& r) {
  if (r.ids.size() != r.planes.size() || r.ids.empty()) throw ShapeError("wfr: band table mismatch");
  std::vector<std::uint8_t> out(kWfrMagic.begin(), kWfrMagic.end());
  detail::put_u32(out, r.width);
  detail::put_u32(out, r.height);
  detail::put_u32(out, static_cast<std::uint32_t>(r.ids.size()));
  for (auto id : r.ids) detail::put_u16(out, id);
  out.reserve(out.size() + r.planes.size() * std::size_t{r.width} * r.height * 2);
  for (const auto& p : r.planes) {
    if (p.size() != std::size_t{r.width} * r.height) throw ShapeError("wfr: plane size mismatch");
    for (auto v : p) detail::put_u16(out, v);
  }
  detail::write_atomically(path, out.data(), out.size());
}

inline bool looks_like_wfr(const std::vector<std::uint8_t>& bytes) {
  return bytes.size() >= 4 && std::equal(kWfrMagic.begin(), kWfrMagic.end(), bytes.begin());
}

inline RawRaster decode_wfr(const std::vector<std::uint8_t>& b, const std::string& path = "<memory>") {
  if (b.size() < 16 || !looks_like_wfr(b)) throw FormatError("not a wfr container: " + path);
  RawRaster r;
  r.width = detail::get_u32(b, 4);
  r.height = detail::get_u32(b, 8);
  const auto count = detail::get_u32(b, 12);
  if (r.width == 0 || r.height == 0 || count == 0) throw FormatError("wfr: empty raster: " + path);
  const std::size_t plane = std::size_t{r.width} * r.height;
  const std::size_t need = 16 + 2 * std::size_t{count} + 2 * plane * count;
  if (b.size() != need)
    throw FormatError("wfr: expected " + std::to_string(need) + " bytes, found " + std::to_string(b.size()) +
                      ": " + path);
  for (std::uint32_t i = 0; i < count; ++i) r.ids.push_back(detail::get_u16(b, 16 + 2 * i));
  std::size_t off = 16 + 2 * std::size_t{count};
  for (std::uint32_t i = 0; i < count; ++i) {
    std::vector<std::uint16_t> p(plane);
    for (std::size_t k = 0; k < plane; ++k, off += 2) p[k] = detail::get_u16(b, off);
    r.planes.push_back(std::move(p));
  }
  return r;
}

inline RawRaster read_wfr(const std::string& path) { return decode_wfr(tiff::read_file(path), path); }

// ---------------------------------------------------------------------------
// Scene files
// ---------------------------------------------------------------------------

/// Sidecar metadata lives next to the raster as "<file>.json":
/// {"scene_id": "...", "bands": [7, 6, 2]}.
inline std::filesystem::path sidecar_path(const std::filesystem::path& raster) {
  auto p = raster;
  p += ".json";
  return p;
}

struct SceneMetadata {
  std::string scene_id;
  std::vector<BandId> bands;
};

inline std::optional<SceneMetadata> read_sidecar(const std::filesystem::path& raster) {
  const auto p = sidecar_path(raster);
  if (!std::filesystem::exists(p)) return std::nullopt;
  std::ifstream in(p);
  if (!in) throw IoError("cannot open: " + p.string());
  nlohmann::json j;
  try {
    in >> j;
    SceneMetadata m;
    m.scene_id = j.value("scene_id", std::string{});
    for (int b : j.at("bands")) m.bands.push_back(band_from_index(b));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad sidecar " + p.string() + ": " + e.what());
  }
}

inline void write_sidecar(const std::filesystem::path& raster, const SceneMetadata& m) {
  nlohmann::json j;
  j["scene_id"] = m.scene_id;
  j["bands"] = nlohmann::json::array();
  for (BandId b : m.bands) j["bands"].push_back(band_index(b));
  detail::write_text_atomically(sidecar_path(raster), j.dump(2) + "\n");
}

/// Band ids assumed for a file with no band metadata: 1..N, except that
/// ten bands are read as the Landsat-8 set without the panchromatic band.
inline std::vector<BandId> default_band_ids(std::size_t n) {
  if (n == 10) {
    std::vector<BandId> v;
    for (int i = 1; i <= 11; ++i)
      if (i != band_index(BandId::Pan)) v.push_back(band_from_index(i));
    return v;
  }
  if (n > 11) throw FormatError("raster has " + std::to_string(n) + " bands but no band metadata");
  std::vector<BandId> v;
  for (std::size_t i = 1; i <= n; ++i) v.push_back(band_from_index(static_cast<int>(i)));
  return v;
}

/// Loads a multiband 16-bit TIFF or .wfr scene. The format is detected from
/// the file content. The panchromatic band is dropped if present.
inline Scene load_scene(const std::string& path) {
  const auto bytes = tiff::read_file(path);
  const auto meta = read_sidecar(path);
  std::uint32_t width = 0, height = 0;
  std::vector<std::vector<std::uint16_t>> planes;
  std::vector<BandId> ids;
  if (looks_like_wfr(bytes)) {
    auto raw = decode_wfr(bytes, path);
    width = raw.width;
    height = raw.height;
    for (auto id : raw.ids) {
      if (id == 0) throw FormatError("wfr file holds a mask plane, not a scene: " + path);
      ids.push_back(band_from_index(id));
    }
    planes = std::move(raw.planes);
  } else if (tiff::looks_like_tiff(bytes)) {
    auto r = tiff::decode(bytes);
    width = r.width;
    height = r.height;
    planes = std::move(r.bands);
    ids = meta ? meta->bands : default_band_ids(planes.size());
  } else {
    throw FormatError("unrecognised raster format: " + path);
  }
  if (meta && meta->bands.size() != planes.size())
    throw FormatError("sidecar lists " + std::to_string(meta->bands.size()) + " bands, file has " +
                      std::to_string(planes.size()) + ": " + path);
  if (ids.size() != planes.size()) throw FormatError("band table mismatch: " + path);

  std::vector<BandId> kept;
  std::vector<std::vector<std::uint16_t>> kept_planes;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == BandId::Pan) continue;
    kept.push_back(ids[i]);
    kept_planes.push_back(std::move(planes[i]));
  }
  std::string id = meta && !meta->scene_id.empty() ? meta->scene_id
                                                   : std::filesystem::path(path).stem().string();
  return Scene(width, height, std::move(kept), std::move(kept_planes), std::move(id));
}

enum class SceneFormat { Wfr, Tiff };

inline SceneFormat format_for_path(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".tif" || ext == ".tiff") return SceneFormat::Tiff;
  return SceneFormat::Wfr;
}

/// Writes the scene (format from the extension) plus its metadata sidecar.
inline void save_scene(const Scene& scene, const std::string& path,
                       const tiff::WriteOptions& tiff_options = {}) {
  std::vector<std::vector<std::uint16_t>> planes;
  for (std::size_t i = 0; i < scene.bands().size(); ++i) planes.push_back(scene.plane(i));
  if (format_for_path(path) == SceneFormat::Tiff) {
    tiff::Raster r{scene.width(), scene.height(), std::move(planes)};
    tiff::write(path, r, tiff_options);
  } else {
    RawRaster r{scene.width(), scene.height(), {}, std::move(planes)};
    for (BandId b : scene.bands()) r.ids.push_back(static_cast<std::uint16_t>(band_index(b)));
    write_wfr(path, r);
  }
  write_sidecar(path, SceneMetadata{scene.scene_id(), scene.bands()});
}

}  // namespace wildfire
