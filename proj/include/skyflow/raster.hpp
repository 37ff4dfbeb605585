#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "skyflow/common.hpp"

namespace skyflow {

// Row-major interleaved float raster. The workhorse container behind
// SkyImage, FlowField and EncodedFlow.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Raster() = default;
  Raster(int w, int h, int c, float fill = 0.f)
      : width(w), height(h), channels(c),
        data(size_t(w) * size_t(h) * size_t(c), fill) {}

  float& at(int x, int y, int c) {
    return data[(size_t(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c) const {
    return data[(size_t(y) * width + x) * channels + c];
  }

  size_t pixel_count() const { return size_t(width) * size_t(height); }
  bool same_shape(const Raster& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

// The valid region of every hemispherical frame: the inscribed disc of the
// square, centered, radius = width/2. Pixel centers sit at half-integers.
struct DiscDomain {
  int size = 0;

  explicit DiscDomain(int width) : size(width) {}

  double radius() const { return size * 0.5; }
  double cx() const { return size * 0.5; }
  double cy() const { return size * 0.5; }

  bool valid(int x, int y) const {
    double dx = (x + 0.5) - cx();
    double dy = (y + 0.5) - cy();
    return dx * dx + dy * dy <= radius() * radius();
  }

  // continuous coordinate inside the disc (inclusive boundary)
  bool inside(double u, double v) const {
    double dx = u - cx();
    double dy = v - cy();
    return dx * dx + dy * dy <= radius() * radius() * (1.0 + 1e-12);
  }
};

// Per-pixel validity flags for a width x width frame: flag set iff the
// pixel center lies within the inscribed disc.
inline std::vector<uint8_t> disc_validity(int width) {
  if (width <= 0) throw PreconditionError("disc_validity: width must be > 0");
  DiscDomain disc(width);
  std::vector<uint8_t> flags(size_t(width) * width, 0);
  for (int y = 0; y < width; ++y)
    for (int x = 0; x < width; ++x)
      flags[size_t(y) * width + x] = disc.valid(x, y) ? 1 : 0;
  return flags;
}

inline float luminance(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

// Bilinear sample of one channel at continuous coordinate (u, v) given in the
// half-integer pixel-center convention. Out-of-bounds taps read as zero,
// matching the all-zero invalid region of sky frames.
inline float sample_bilinear(const Raster& img, double u, double v, int c) {
  double fx = u - 0.5;
  double fy = v - 0.5;
  int x0 = int(std::floor(fx));
  int y0 = int(std::floor(fy));
  double ax = fx - x0;
  double ay = fy - y0;
  auto tap = [&](int x, int y) -> float {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return 0.f;
    return img.at(x, y, c);
  };
  float v00 = tap(x0, y0), v10 = tap(x0 + 1, y0);
  float v01 = tap(x0, y0 + 1), v11 = tap(x0 + 1, y0 + 1);
  float top = float(v00 * (1.0 - ax) + v10 * ax);
  float bot = float(v01 * (1.0 - ax) + v11 * ax);
  return float(top * (1.0 - ay) + bot * ay);
}

}  // namespace skyflow
