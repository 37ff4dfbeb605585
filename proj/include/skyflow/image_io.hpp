#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "skyflow/raster.hpp"
#include "skyflow/sky_image.hpp"

namespace skyflow {

inline float srgb_to_linear(float s) {
  return s <= 0.04045f ? s / 12.92f
                       : std::pow((s + 0.055f) / 1.055f, 2.4f);
}

inline float linear_to_srgb(float l) {
  if (l <= 0.f) return 0.f;
  if (l >= 1.f) return 1.f;
  return l <= 0.0031308f ? l * 12.92f
                         : 1.055f * std::pow(l, 1.f / 2.4f) - 0.055f;
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

// Read an 8-bit PNG into a float raster in [0,1]. Grayscale expands to one
// channel, palettes and 16-bit depths are converted down, alpha is dropped.
// If linearize is set, RGB channels are sRGB-decoded to linear.
inline Raster read_png(const std::string& path, bool linearize = true) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ConfigError("read_png: cannot open " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw ConfigError("read_png: not a PNG file: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("read_png: libpng init failed");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("read_png: decode failed for " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  int channels = png_get_channels(png, info);
  size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Raster out(int(w), int(h), channels);
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        float v = pixels[y * stride + x * channels + c] / 255.f;
        out.at(int(x), int(y), c) =
            (linearize && channels >= 3) ? srgb_to_linear(v) : v;
      }
  return out;
}

// Write an 8-bit PNG. 3-channel rasters are sRGB-encoded when encode_srgb is
// set; single-channel rasters are written as grayscale without a transfer.
inline void write_png(const std::string& path, const Raster& img,
                      bool encode_srgb = true) {
  if (img.channels != 1 && img.channels != 3)
    throw PreconditionError("write_png: only 1 or 3 channels supported");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ConfigError("write_png: cannot open " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("write_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("write_png: encode failed for " + path);
  }
  png_init_io(png, fp.get());
  int color = img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, img.width, img.height, 8, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(size_t(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        float v = img.at(x, y, c);
        if (encode_srgb && img.channels == 3) v = linear_to_srgb(v);
        v = std::clamp(v, 0.f, 1.f);
        row[size_t(x) * img.channels + c] =
            png_byte(std::lround(v * 255.f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline void write_mask_png(const std::string& path, const CloudMask& mask) {
  Raster gray(mask.width, mask.height, 1);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      gray.at(x, y, 0) = mask.at(x, y) ? 1.f : 0.f;
  write_png(path, gray, /*encode_srgb=*/false);
}

// Portable float map, color variant: "PF", dims, negative scale for
// little-endian, scanlines bottom-to-top.
inline void write_pfm(const std::string& path, const Raster& img) {
  if (img.channels != 3)
    throw PreconditionError("write_pfm: expected a 3-channel raster");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("write_pfm: cannot open " + path);
  f << "PF\n" << img.width << " " << img.height << "\n-1.0\n";
  for (int y = img.height - 1; y >= 0; --y) {
    const float* row = img.data.data() + size_t(y) * img.width * 3;
    f.write(reinterpret_cast<const char*>(row),
            std::streamsize(sizeof(float)) * img.width * 3);
  }
  if (!f) throw Error("write_pfm: write failed for " + path);
}

inline Raster read_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("read_pfm: cannot open " + path);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  f >> magic >> w >> h >> scale;
  if (magic != "PF" || w <= 0 || h <= 0 || scale >= 0.0)
    throw ConfigError("read_pfm: unsupported PFM variant in " + path);
  f.get();  // single whitespace after the header
  Raster out(w, h, 3);
  for (int y = h - 1; y >= 0; --y) {
    float* row = out.data.data() + size_t(y) * w * 3;
    f.read(reinterpret_cast<char*>(row), std::streamsize(sizeof(float)) * w * 3);
  }
  if (!f) throw Error("read_pfm: truncated file " + path);
  return out;
}

}  // namespace skyflow
