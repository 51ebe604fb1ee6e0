#pragma once

// PNG encoding for images (RGB) and masks (8-bit palette, index = class id,
// index 255 = unknown). Output carries no timestamps, so identical inputs
// give identical bytes.

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <stdexcept>
#include <filesystem>
#include <string>
#include <vector>

#include "smis/archive.hpp"
#include "smis/mask.hpp"
#include "smis/tensor.hpp"

namespace smis {

using Rgb = std::array<std::uint8_t, 3>;

// Colour for each class id; unknown is black.
inline std::vector<Rgb> default_palette(int classes) {
  static constexpr Rgb base[] = {{0, 0, 0},     {230, 25, 75},  {60, 180, 75},  {0, 130, 200}, {245, 130, 48},
                                 {145, 30, 180}, {70, 240, 240}, {240, 50, 230}, {210, 245, 60}, {250, 190, 212},
                                 {0, 128, 128},  {220, 190, 255}, {170, 110, 40}, {255, 250, 200}, {128, 0, 0}};
  std::vector<Rgb> p(classes);
  for (int c = 0; c < classes; ++c) {
    if (c < static_cast<int>(std::size(base))) {
      p[c] = c == 0 ? Rgb{128, 128, 128} : base[c];
    } else {
      p[c] = {static_cast<std::uint8_t>((c * 67) % 256), static_cast<std::uint8_t>((c * 151) % 256),
              static_cast<std::uint8_t>((c * 29) % 256)};
    }
  }
  return p;
}

namespace detail {

struct PngWriteBuffer {
  std::string bytes;
};

inline void png_write_to_string(png_structp png, png_bytep data, png_size_t len) {
  auto* buf = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
  buf->bytes.append(reinterpret_cast<const char*>(data), len);
}

inline void png_flush_noop(png_structp) {}

struct PngReadBuffer {
  const std::string* bytes;
  std::size_t pos;
};

inline void png_read_from_string(png_structp png, png_bytep out, png_size_t len) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->pos + len > buf->bytes->size()) png_error(png, "truncated PNG");
  std::memcpy(out, buf->bytes->data() + buf->pos, len);
  buf->pos += len;
}

inline std::string encode_png(int width, int height, int color_type, const std::vector<std::uint8_t>& pixels,
                              const std::vector<Rgb>* palette) {
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  std::vector<png_color> pal;
  if (palette)
    for (const auto& c : *palette) pal.push_back({c[0], c[1], c[2]});
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * width * channels);
  PngWriteBuffer buf;

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG: encoding failed");
  }
  png_set_write_fn(png, &buf, png_write_to_string, png_flush_noop);
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  if (palette) png_set_PLTE(png, info, pal.data(), static_cast<int>(pal.size()));
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return std::move(buf.bytes);
}

struct DecodedPng {
  int width = 0, height = 0;
  bool indexed = false;
  int channels = 0;  // after expansion, for non-indexed images (1, 3)
  std::vector<std::uint8_t> pixels;
};

inline constexpr std::uint32_t kMaxPngSide = 1 << 14;

inline DecodedPng decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    throw InputError("not a PNG file");
  DecodedPng out;
  std::vector<png_bytep> rows;
  PngReadBuffer buf{&bytes, 0};
  bool too_large = false;

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("PNG: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw InputError("PNG: malformed or truncated data");
  }
  png_set_read_fn(png, &buf, png_read_from_string);
  png_read_info(png, info);
  {
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    const auto w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    if (w > kMaxPngSide || h > kMaxPngSide) {
      too_large = true;
    } else {
      out.width = static_cast<int>(w);
      out.height = static_cast<int>(h);
      out.indexed = color == PNG_COLOR_TYPE_PALETTE;
      if (depth == 16) png_set_strip_16(png);
      if (out.indexed) {
        if (depth < 8) png_set_packing(png);
        out.channels = 1;
      } else {
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        out.channels = (color & PNG_COLOR_MASK_COLOR) ? 3 : 1;
      }
    }
  }
  if (too_large) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw InputError("PNG: image too large");
  }
  png_read_update_info(png, info);
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
  rows.resize(out.height);
  for (int y = 0; y < out.height; ++y)
    rows[y] = out.pixels.data() + static_cast<std::size_t>(y) * out.width * out.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace detail

inline std::uint8_t to_byte(float v) {
  const double s = std::round((std::clamp(static_cast<double>(v), -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(s);
}

inline std::string encode_image_png(const Volume<float>& img) {
  if (img.channels != 3) throw InputError("encode_image_png expects 3 channels");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) px[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] = to_byte(img(c, y, x));
  return detail::encode_png(img.width, img.height, PNG_COLOR_TYPE_RGB, px, nullptr);
}

inline Volume<float> decode_image_png(const std::string& bytes) {
  const auto d = detail::decode_png(bytes);
  if (d.indexed) throw InputError("expected an RGB image, got a palette image");
  Volume<float> img(3, d.height, d.width);
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const int src = d.channels == 3 ? c : 0;
        img(c, y, x) = d.pixels[(static_cast<std::size_t>(y) * d.width + x) * d.channels + src] / 127.5f - 1.0f;
      }
  return img;
}

inline std::string encode_mask_png(const SemanticMask& mask, const std::vector<Rgb>& palette = {}) {
  std::vector<Rgb> pal(256, Rgb{0, 0, 0});
  const auto colors = palette.empty() ? default_palette(mask.class_count) : palette;
  for (int c = 0; c < mask.class_count && c < static_cast<int>(colors.size()); ++c) pal[c] = colors[c];
  return detail::encode_png(mask.width, mask.height, PNG_COLOR_TYPE_PALETTE, mask.labels, &pal);
}

// Palette or 8-bit grey images are read as raw class indices.
inline SemanticMask decode_mask_png(const std::string& bytes, int class_count, MaskKind kind) {
  const auto d = detail::decode_png(bytes);
  if (!d.indexed && d.channels != 1) throw InputError("mask PNG must be palette or greyscale");
  SemanticMask m(kind, d.width, d.height, class_count, kUnknown);
  m.labels.assign(d.pixels.begin(), d.pixels.end());
  m.validate();
  return m;
}

// Render a mask in palette colours as an RGB image in [-1, 1].
inline Volume<float> colorize(const SemanticMask& mask, const std::vector<Rgb>& palette = {}) {
  const auto colors = palette.empty() ? default_palette(mask.class_count) : palette;
  Volume<float> img(3, mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      const ClassId c = mask.at(x, y);
      const Rgb rgb = c == kUnknown ? Rgb{0, 0, 0} : colors[c];
      for (int k = 0; k < 3; ++k) img(k, y, x) = rgb[k] / 127.5f - 1.0f;
    }
  return img;
}

inline void save_image(const Volume<float>& img, const std::filesystem::path& path) {
  write_file(path, encode_image_png(img));
}
inline Volume<float> load_image(const std::filesystem::path& path) { return decode_image_png(read_file(path)); }

inline void save_mask(const SemanticMask& m, const std::filesystem::path& path, const std::vector<Rgb>& palette = {}) {
  write_file(path, encode_mask_png(m, palette));
}
inline SemanticMask load_mask(const std::filesystem::path& path, int class_count, MaskKind kind) {
  return decode_mask_png(read_file(path), class_count, kind);
}

// Tiles equally sized RGB images into a grid (row-major).
inline Volume<float> tile_images(const std::vector<Volume<float>>& tiles, int columns) {
  if (tiles.empty() || columns <= 0) throw InputError("tile_images: nothing to tile");
  const int h = tiles.front().height, w = tiles.front().width;
  const int rows = static_cast<int>((tiles.size() + columns - 1) / columns);
  Volume<float> sheet(3, rows * h, columns * w, -1.0f);
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    if (tiles[t].height != h || tiles[t].width != w) throw InputError("tile_images: tiles differ in size");
    const int oy = static_cast<int>(t / columns) * h, ox = static_cast<int>(t % columns) * w;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) sheet(c, oy + y, ox + x) = tiles[t](c, y, x);
  }
  return sheet;
}

}  // namespace smis
