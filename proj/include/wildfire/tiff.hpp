#pragma once

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "wildfire/error.hpp"

// Minimal baseline TIFF codec for multiband unsigned 16-bit rasters.
//
// Reading supports classic (non-Big) TIFF in either byte order, strips or
// tiles, chunky or planar sample layout, multi-page files (each page adds
// its samples as further bands), no compression or deflate, and the
// horizontal-differencing predictor.

namespace wildfire::tiff {

struct Raster {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::vector<std::uint16_t>> bands;
};

struct WriteOptions {
  bool planar = false;
  std::uint32_t tile = 0;  ///< 0 writes strips, otherwise square tiles (multiple of 16)
  bool deflate = false;
  bool predictor = false;
};

namespace tag {
inline constexpr std::uint16_t kImageWidth = 256;
inline constexpr std::uint16_t kImageLength = 257;
inline constexpr std::uint16_t kBitsPerSample = 258;
inline constexpr std::uint16_t kCompression = 259;
inline constexpr std::uint16_t kPhotometric = 262;
inline constexpr std::uint16_t kStripOffsets = 273;
inline constexpr std::uint16_t kSamplesPerPixel = 277;
inline constexpr std::uint16_t kRowsPerStrip = 278;
inline constexpr std::uint16_t kStripByteCounts = 279;
inline constexpr std::uint16_t kPlanarConfig = 284;
inline constexpr std::uint16_t kPredictor = 317;
inline constexpr std::uint16_t kTileWidth = 322;
inline constexpr std::uint16_t kTileLength = 323;
inline constexpr std::uint16_t kTileOffsets = 324;
inline constexpr std::uint16_t kTileByteCounts = 325;
inline constexpr std::uint16_t kSampleFormat = 339;
}  // namespace tag

namespace detail {

class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> bytes) : buf_(std::move(bytes)) {
    if (buf_.size() < 8) throw FormatError("tiff: file too short");
    if (buf_[0] == 'I' && buf_[1] == 'I')
      little_ = true;
    else if (buf_[0] == 'M' && buf_[1] == 'M')
      little_ = false;
    else
      throw FormatError("tiff: bad byte-order mark");
    const auto magic = u16(2);
    if (magic == 43) throw FormatError("tiff: BigTIFF is not supported");
    if (magic != 42) throw FormatError("tiff: bad magic number");
  }

  std::uint16_t u16(std::size_t off) const {
    check(off, 2);
    return little_ ? std::uint16_t(buf_[off] | (buf_[off + 1] << 8))
                   : std::uint16_t((buf_[off] << 8) | buf_[off + 1]);
  }
  std::uint32_t u32(std::size_t off) const {
    check(off, 4);
    const std::uint32_t b0 = buf_[off], b1 = buf_[off + 1], b2 = buf_[off + 2], b3 = buf_[off + 3];
    return little_ ? (b0 | (b1 << 8) | (b2 << 16) | (b3 << 24))
                   : ((b0 << 24) | (b1 << 16) | (b2 << 8) | b3);
  }
  void check(std::size_t off, std::size_t n) const {
    if (off + n > buf_.size() || off + n < off) throw FormatError("tiff: offset out of range");
  }
  bool little() const { return little_; }
  std::span<const std::uint8_t> bytes(std::size_t off, std::size_t n) const {
    check(off, n);
    return {buf_.data() + off, n};
  }
  std::size_t size() const { return buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
  bool little_ = true;
};

struct Entry {
  std::uint16_t type = 0;
  std::uint32_t count = 0;
  std::size_t value_offset = 0;  // where the values live
};

inline std::size_t type_size(std::uint16_t type) {
  switch (type) {
    case 1: case 2: case 6: case 7: return 1;
    case 3: case 8: return 2;
    case 4: case 9: case 11: return 4;
    case 5: case 10: case 12: return 8;
    default: return 0;
  }
}

struct Ifd {
  std::vector<std::pair<std::uint16_t, Entry>> entries;

  const Entry* find(std::uint16_t t) const {
    for (const auto& [id, e] : entries)
      if (id == t) return &e;
    return nullptr;
  }
};

inline std::vector<std::uint32_t> values(const Reader& r, const Entry& e) {
  std::vector<std::uint32_t> out(e.count);
  for (std::uint32_t i = 0; i < e.count; ++i) {
    if (e.type == 3)
      out[i] = r.u16(e.value_offset + 2 * i);
    else if (e.type == 4)
      out[i] = r.u32(e.value_offset + 4 * i);
    else if (e.type == 1)
      out[i] = r.bytes(e.value_offset + i, 1)[0];
    else
      throw FormatError("tiff: unsupported integer field type " + std::to_string(e.type));
  }
  return out;
}

inline std::vector<std::uint32_t> required(const Reader& r, const Ifd& ifd, std::uint16_t t,
                                           const char* name) {
  const Entry* e = ifd.find(t);
  if (!e) throw FormatError(std::string("tiff: missing required tag ") + name);
  return values(r, *e);
}

inline std::uint32_t scalar_or(const Reader& r, const Ifd& ifd, std::uint16_t t,
                               std::uint32_t fallback) {
  const Entry* e = ifd.find(t);
  if (!e) return fallback;
  const auto v = values(r, *e);
  return v.empty() ? fallback : v[0];
}

inline std::vector<std::uint8_t> inflate(std::span<const std::uint8_t> in, std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  uLongf dest_len = static_cast<uLongf>(expected);
  const int rc = ::uncompress(out.data(), &dest_len, in.data(), static_cast<uLong>(in.size()));
  if (rc != Z_OK && rc != Z_BUF_ERROR) throw FormatError("tiff: deflate stream is corrupt");
  if (dest_len < expected) out.resize(dest_len);
  return out;
}

inline std::vector<std::uint8_t> deflate(std::span<const std::uint8_t> in) {
  uLongf bound = ::compressBound(static_cast<uLong>(in.size()));
  std::vector<std::uint8_t> out(bound);
  if (::compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()), 6) != Z_OK)
    throw IoError("tiff: deflate failed");
  out.resize(bound);
  return out;
}

/// Decodes one page and appends its samples as bands.
inline void read_page(const Reader& r, const Ifd& ifd, Raster& out) {
  const auto width = required(r, ifd, tag::kImageWidth, "ImageWidth").at(0);
  const auto height = required(r, ifd, tag::kImageLength, "ImageLength").at(0);
  const auto spp = scalar_or(r, ifd, tag::kSamplesPerPixel, 1);
  if (width == 0 || height == 0 || spp == 0) throw FormatError("tiff: empty image");

  std::vector<std::uint32_t> bits = ifd.find(tag::kBitsPerSample)
                                        ? values(r, *ifd.find(tag::kBitsPerSample))
                                        : std::vector<std::uint32_t>{1};
  for (auto b : bits)
    if (b != 16) throw FormatError("tiff: band bit depth is " + std::to_string(b) + ", expected 16");
  if (scalar_or(r, ifd, tag::kSampleFormat, 1) != 1)
    throw FormatError("tiff: only unsigned integer samples are supported");

  const auto compression = scalar_or(r, ifd, tag::kCompression, 1);
  if (compression != 1 && compression != 8 && compression != 32946)
    throw FormatError("tiff: unsupported compression " + std::to_string(compression));
  const auto predictor = scalar_or(r, ifd, tag::kPredictor, 1);
  if (predictor != 1 && predictor != 2)
    throw FormatError("tiff: unsupported predictor " + std::to_string(predictor));
  const bool planar = scalar_or(r, ifd, tag::kPlanarConfig, 1) == 2;

  if (!out.bands.empty() && (out.width != width || out.height != height))
    throw ShapeError("tiff: inconsistent band dimensions across pages");
  out.width = width;
  out.height = height;

  const bool tiled = ifd.find(tag::kTileWidth) != nullptr;
  std::uint32_t cw, ch;  // chunk width/height
  std::vector<std::uint32_t> offsets, counts;
  if (tiled) {
    cw = required(r, ifd, tag::kTileWidth, "TileWidth").at(0);
    ch = required(r, ifd, tag::kTileLength, "TileLength").at(0);
    offsets = required(r, ifd, tag::kTileOffsets, "TileOffsets");
    counts = required(r, ifd, tag::kTileByteCounts, "TileByteCounts");
  } else {
    cw = width;
    ch = std::min(scalar_or(r, ifd, tag::kRowsPerStrip, height), height);
    offsets = required(r, ifd, tag::kStripOffsets, "StripOffsets");
    counts = required(r, ifd, tag::kStripByteCounts, "StripByteCounts");
  }
  if (cw == 0 || ch == 0) throw FormatError("tiff: zero chunk size");
  const std::uint32_t across = (width + cw - 1) / cw;
  const std::uint32_t down = (height + ch - 1) / ch;
  const std::uint32_t planes = planar ? spp : 1;
  const std::uint32_t per_pixel = planar ? 1 : spp;
  if (offsets.size() < std::size_t{across} * down * planes || counts.size() < offsets.size())
    throw FormatError("tiff: chunk table too short");

  const std::size_t first_band = out.bands.size();
  for (std::uint32_t s = 0; s < spp; ++s)
    out.bands.emplace_back(std::size_t{width} * height, std::uint16_t{0});

  for (std::uint32_t p = 0; p < planes; ++p) {
    for (std::uint32_t cy = 0; cy < down; ++cy) {
      for (std::uint32_t cx = 0; cx < across; ++cx) {
        const std::size_t idx = (std::size_t{p} * down + cy) * across + cx;
        auto raw = r.bytes(offsets[idx], counts[idx]);
        // Strips at the bottom may be short.
        const std::uint32_t rows = tiled ? ch : std::min(ch, height - cy * ch);
        const std::size_t expected = std::size_t{cw} * rows * per_pixel * 2;
        std::vector<std::uint8_t> data =
            compression == 1 ? std::vector<std::uint8_t>(raw.begin(), raw.end())
                             : inflate(raw, expected);
        if (data.size() < expected) throw FormatError("tiff: chunk is truncated");
        std::vector<std::uint16_t> samples(std::size_t{cw} * rows * per_pixel);
        for (std::size_t i = 0; i < samples.size(); ++i)
          samples[i] = r.little() ? std::uint16_t(data[2 * i] | (data[2 * i + 1] << 8))
                                  : std::uint16_t((data[2 * i] << 8) | data[2 * i + 1]);
        if (predictor == 2) {
          for (std::uint32_t y = 0; y < rows; ++y) {
            auto* row = samples.data() + std::size_t{y} * cw * per_pixel;
            for (std::size_t i = per_pixel; i < std::size_t{cw} * per_pixel; ++i)
              row[i] = std::uint16_t(row[i] + row[i - per_pixel]);
          }
        }
        for (std::uint32_t y = 0; y < rows; ++y) {
          const std::uint32_t gy = cy * ch + y;
          if (gy >= height) break;
          for (std::uint32_t x = 0; x < cw; ++x) {
            const std::uint32_t gx = cx * cw + x;
            if (gx >= width) break;
            const std::size_t src = (std::size_t{y} * cw + x) * per_pixel;
            const std::size_t dst = std::size_t{gy} * width + gx;
            if (planar) {
              out.bands[first_band + p][dst] = samples[src];
            } else {
              for (std::uint32_t s = 0; s < spp; ++s) out.bands[first_band + s][dst] = samples[src + s];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return bytes;
}

inline bool looks_like_tiff(std::span<const std::uint8_t> head) {
  return head.size() >= 4 && ((head[0] == 'I' && head[1] == 'I' && head[2] == 42 && head[3] == 0) ||
                              (head[0] == 'M' && head[1] == 'M' && head[2] == 0 && head[3] == 42));
}

inline Raster decode(std::vector<std::uint8_t> bytes) {
  detail::Reader r(std::move(bytes));
  Raster out;
  std::size_t ifd_off = r.u32(4);
  std::size_t pages = 0;
  while (ifd_off != 0) {
    if (++pages > 4096) throw FormatError("tiff: IFD chain too long");
    detail::Ifd ifd;
    const auto n = r.u16(ifd_off);
    for (std::uint16_t i = 0; i < n; ++i) {
      const std::size_t e = ifd_off + 2 + 12 * std::size_t{i};
      detail::Entry entry;
      const auto id = r.u16(e);
      entry.type = r.u16(e + 2);
      entry.count = r.u32(e + 4);
      const std::size_t bytes_needed = detail::type_size(entry.type) * entry.count;
      entry.value_offset = bytes_needed <= 4 ? e + 8 : r.u32(e + 8);
      ifd.entries.emplace_back(id, entry);
    }
    detail::read_page(r, ifd, out);
    ifd_off = r.u32(ifd_off + 2 + 12 * std::size_t{n});
  }
  if (out.bands.empty()) throw FormatError("tiff: no image data");
  return out;
}

inline Raster read(const std::string& path) { return decode(read_file(path)); }

/// Writes a single-page little-endian TIFF with one sample per band.
inline void write(const std::string& path, const Raster& raster, const WriteOptions& opt = {}) {
  const std::uint32_t w = raster.width, h = raster.height;
  const auto spp = static_cast<std::uint32_t>(raster.bands.size());
  if (spp == 0 || w == 0 || h == 0) throw ShapeError("tiff: nothing to write");
  for (const auto& b : raster.bands)
    if (b.size() != std::size_t{w} * h) throw ShapeError("tiff: band size mismatch");
  if (opt.tile % 16 != 0) throw ConfigError("tiff: tile size must be a multiple of 16");

  const bool tiled = opt.tile > 0;
  const std::uint32_t cw = tiled ? opt.tile : w;
  const std::uint32_t ch = tiled ? opt.tile : std::max<std::uint32_t>(1, std::min<std::uint32_t>(h, 16));
  const std::uint32_t across = (w + cw - 1) / cw, down = (h + ch - 1) / ch;
  const std::uint32_t planes = opt.planar ? spp : 1, per_pixel = opt.planar ? 1 : spp;

  std::vector<std::vector<std::uint8_t>> chunks;
  for (std::uint32_t p = 0; p < planes; ++p) {
    for (std::uint32_t cy = 0; cy < down; ++cy) {
      for (std::uint32_t cx = 0; cx < across; ++cx) {
        const std::uint32_t rows = tiled ? ch : std::min(ch, h - cy * ch);
        std::vector<std::uint16_t> s(std::size_t{cw} * rows * per_pixel, 0);
        for (std::uint32_t y = 0; y < rows; ++y) {
          const std::uint32_t gy = cy * ch + y;
          if (gy >= h) break;
          for (std::uint32_t x = 0; x < cw; ++x) {
            const std::uint32_t gx = cx * cw + x;
            if (gx >= w) break;
            const std::size_t src = std::size_t{gy} * w + gx;
            const std::size_t dst = (std::size_t{y} * cw + x) * per_pixel;
            if (opt.planar)
              s[dst] = raster.bands[p][src];
            else
              for (std::uint32_t b = 0; b < spp; ++b) s[dst + b] = raster.bands[b][src];
          }
        }
        if (opt.predictor) {
          for (std::uint32_t y = 0; y < rows; ++y) {
            auto* row = s.data() + std::size_t{y} * cw * per_pixel;
            for (std::size_t i = std::size_t{cw} * per_pixel; i-- > per_pixel;)
              row[i] = std::uint16_t(row[i] - row[i - per_pixel]);
          }
        }
        std::vector<std::uint8_t> bytes(s.size() * 2);
        for (std::size_t i = 0; i < s.size(); ++i) {
          bytes[2 * i] = std::uint8_t(s[i] & 0xFF);
          bytes[2 * i + 1] = std::uint8_t(s[i] >> 8);
        }
        chunks.push_back(opt.deflate ? detail::deflate(bytes) : std::move(bytes));
      }
    }
  }

  std::vector<std::uint8_t> out = {'I', 'I', 42, 0, 0, 0, 0, 0};
  auto put16 = [&](std::uint16_t v) {
    out.push_back(std::uint8_t(v & 0xFF));
    out.push_back(std::uint8_t(v >> 8));
  };
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xFF));
  };
  auto patch32 = [&](std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out[at + i] = std::uint8_t((v >> (8 * i)) & 0xFF);
  };

  std::vector<std::uint32_t> offsets, counts;
  for (const auto& c : chunks) {
    offsets.push_back(static_cast<std::uint32_t>(out.size()));
    counts.push_back(static_cast<std::uint32_t>(c.size()));
    out.insert(out.end(), c.begin(), c.end());
    if (out.size() % 2) out.push_back(0);
  }
  auto array32 = [&](const std::vector<std::uint32_t>& v) {
    const auto at = static_cast<std::uint32_t>(out.size());
    for (auto x : v) put32(x);
    return at;
  };
  auto array16 = [&](const std::vector<std::uint16_t>& v) {
    const auto at = static_cast<std::uint32_t>(out.size());
    for (auto x : v) put16(x);
    if (out.size() % 2) out.push_back(0);
    return at;
  };

  struct Field {
    std::uint16_t id, type;
    std::uint32_t count, value;
  };
  std::vector<Field> fields;
  auto add_short = [&](std::uint16_t id, std::uint16_t v) { fields.push_back({id, 3, 1, v}); };
  auto add_long = [&](std::uint16_t id, std::uint32_t v) { fields.push_back({id, 4, 1, v}); };
  auto add_longs = [&](std::uint16_t id, const std::vector<std::uint32_t>& v) {
    fields.push_back({id, 4, static_cast<std::uint32_t>(v.size()), v.size() == 1 ? v[0] : array32(v)});
  };
  auto add_shorts = [&](std::uint16_t id, const std::vector<std::uint16_t>& v) {
    if (v.size() <= 2) {
      std::uint32_t packed = v[0] | (v.size() == 2 ? std::uint32_t(v[1]) << 16 : 0u);
      fields.push_back({id, 3, static_cast<std::uint32_t>(v.size()), packed});
    } else {
      fields.push_back({id, 3, static_cast<std::uint32_t>(v.size()), array16(v)});
    }
  };

  add_long(tag::kImageWidth, w);
  add_long(tag::kImageLength, h);
  add_shorts(tag::kBitsPerSample, std::vector<std::uint16_t>(spp, 16));
  add_short(tag::kCompression, opt.deflate ? 8 : 1);
  add_short(tag::kPhotometric, 1);
  if (!tiled) add_longs(tag::kStripOffsets, offsets);
  add_short(tag::kSamplesPerPixel, static_cast<std::uint16_t>(spp));
  if (!tiled) {
    add_long(tag::kRowsPerStrip, ch);
    add_longs(tag::kStripByteCounts, counts);
  }
  add_short(tag::kPlanarConfig, opt.planar ? 2 : 1);
  if (opt.predictor) add_short(tag::kPredictor, 2);
  if (tiled) {
    add_long(tag::kTileWidth, cw);
    add_long(tag::kTileLength, ch);
    add_longs(tag::kTileOffsets, offsets);
    add_longs(tag::kTileByteCounts, counts);
  }
  add_shorts(tag::kSampleFormat, std::vector<std::uint16_t>(spp, 1));
  std::sort(fields.begin(), fields.end(), [](const Field& a, const Field& b) { return a.id < b.id; });

  const auto ifd_at = static_cast<std::uint32_t>(out.size());
  patch32(4, ifd_at);
  put16(static_cast<std::uint16_t>(fields.size()));
  for (const auto& f : fields) {
    put16(f.id);
    put16(f.type);
    put32(f.count);
    if (f.type == 3 && f.count == 1) {
      put16(static_cast<std::uint16_t>(f.value));
      put16(0);
    } else {
      put32(f.value);
    }
  }
  put32(0);

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open for writing: " + path);
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed: " + path);
}

}  // namespace wildfire::tiff
