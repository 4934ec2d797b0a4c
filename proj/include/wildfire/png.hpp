#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "wildfire/error.hpp"

namespace wildfire::png {

/// 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
struct Image {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void on_error(png_structp png_ptr, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png_ptr));
  if (what) *what = msg;
  longjmp(png_jmpbuf(png_ptr), 1);
}

inline void on_warning(png_structp, png_const_charp) {}

}  // namespace detail

/// Writes gray (bit_depth 1 or 8) or RGB (bit_depth 8) images. For 1-bit
/// output every pixel value must be 0 or 1.
inline void write(const std::string& path, const Image& img, int bit_depth = 8) {
  if (img.channels != 1 && img.channels != 3) throw ConfigError("png: channels must be 1 or 3");
  if (bit_depth != 8 && !(bit_depth == 1 && img.channels == 1))
    throw ConfigError("png: unsupported bit depth");
  if (img.pixels.size() != std::size_t{img.width} * img.height * img.channels)
    throw ShapeError("png: pixel buffer size mismatch");

  detail::File file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open for writing: " + path);

  std::string what;
  png_structp png_ptr =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &what, detail::on_error, detail::on_warning);
  png_infop info = png_create_info_struct(png_ptr);
  std::vector<std::uint8_t> row;
  if (setjmp(png_jmpbuf(png_ptr))) {
    png_destroy_write_struct(&png_ptr, &info);
    throw IoError("png write failed (" + what + "): " + path);
  }
  png_init_io(png_ptr, file.get());
  png_set_IHDR(png_ptr, info, img.width, img.height, bit_depth,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png_ptr, info);
  if (bit_depth == 1) png_set_packing(png_ptr);
  const std::size_t stride = std::size_t{img.width} * img.channels;
  for (std::uint32_t y = 0; y < img.height; ++y) {
    row.assign(img.pixels.begin() + y * stride, img.pixels.begin() + (y + 1) * stride);
    png_write_row(png_ptr, row.data());
  }
  png_write_end(png_ptr, nullptr);
  png_destroy_write_struct(&png_ptr, &info);
}

/// Reads any non-interlaced or interlaced PNG into 8-bit gray or RGB.
/// Gray images with bit depth < 8 keep their raw sample values (a 1-bit
/// mask reads back as 0/1), alpha is dropped and palettes are expanded.
inline Image read(const std::string& path) {
  detail::File file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open: " + path);
  std::uint8_t sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError("not a PNG file: " + path);

  std::string what;
  png_structp png_ptr =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &what, detail::on_error, detail::on_warning);
  png_infop info = png_create_info_struct(png_ptr);
  Image img;
  if (setjmp(png_jmpbuf(png_ptr))) {
    png_destroy_read_struct(&png_ptr, &info, nullptr);
    throw FormatError("png read failed (" + what + "): " + path);
  }
  png_init_io(png_ptr, file.get());
  png_set_sig_bytes(png_ptr, 8);
  png_read_info(png_ptr, info);

  const auto color = png_get_color_type(png_ptr, info);
  const auto depth = png_get_bit_depth(png_ptr, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png_ptr);
  if (depth < 8) png_set_packing(png_ptr);
  if (depth == 16) png_set_strip_16(png_ptr);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png_ptr);
  png_set_interlace_handling(png_ptr);
  png_read_update_info(png_ptr, info);

  img.width = png_get_image_width(png_ptr, info);
  img.height = png_get_image_height(png_ptr, info);
  img.channels = png_get_channels(png_ptr, info);
  img.pixels.resize(std::size_t{img.width} * img.height * img.channels);
  std::vector<png_bytep> rows(img.height);
  for (std::uint32_t y = 0; y < img.height; ++y)
    rows[y] = img.pixels.data() + std::size_t{y} * img.width * img.channels;
  png_read_image(png_ptr, rows.data());
  png_read_end(png_ptr, nullptr);
  png_destroy_read_struct(&png_ptr, &info, nullptr);
  return img;
}

}  // namespace wildfire::png
