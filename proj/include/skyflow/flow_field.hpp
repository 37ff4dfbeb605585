#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "skyflow/raster.hpp"
#include "skyflow/sky_image.hpp"

namespace skyflow {

// Dense per-pixel displacement in pixels per delta-t. Zero outside the disc.
struct FlowField {
  Raster uv;  // 2 channels: (du, dv)

  FlowField() = default;
  FlowField(int w, int h) : uv(w, h, 2) {}

  int width() const { return uv.width; }
  int height() const { return uv.height; }

  Vec2f at(int x, int y) const { return {uv.at(x, y, 0), uv.at(x, y, 1)}; }
  void set(int x, int y, Vec2f v) {
    uv.at(x, y, 0) = v.x;
    uv.at(x, y, 1) = v.y;
  }
};

// The 3-channel network representation of a flow field: two channels encode
// the direction angle as (sin, cos), the third the magnitude in pixels.
struct EncodedFlow {
  Raster ch;  // (sin theta, cos theta, magnitude)

  EncodedFlow() = default;
  EncodedFlow(int w, int h) : ch(w, h, 3) {}

  int width() const { return ch.width; }
  int height() const { return ch.height; }
};

inline constexpr float kZeroFlowEps = 1e-6f;

struct FarnebackParams {
  int pyramid_levels = 4;
  double pyramid_scale = 0.5;
  int window = 15;        // box window for the least-squares aggregation
  int poly_n = 5;         // polynomial neighborhood half-size
  double poly_sigma = 1.1;
  int iterations = 3;

  void validate() const {
    if (pyramid_levels < 1 || iterations < 1 || poly_n < 1)
      throw ConfigError("farneback: counts must be >= 1");
    if (!(pyramid_scale > 0.0 && pyramid_scale < 1.0))
      throw ConfigError("farneback: pyramid scale must be in (0,1)");
    if (window < 1 || window % 2 == 0)
      throw ConfigError("farneback: window must be odd and >= 1");
  }
};

// Keep vectors where the mask is set, zero elsewhere (Eq-style elementwise
// multiply of the field by the binary mask).
inline FlowField mask_flow(const FlowField& flow, const CloudMask& mask) {
  if (flow.width() != mask.width || flow.height() != mask.height)
    throw PreconditionError("mask_flow: dimension mismatch");
  FlowField out(flow.width(), flow.height());
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x)
      if (mask.at(x, y)) out.set(x, y, flow.at(x, y));
  return out;
}

inline EncodedFlow encode_flow(const FlowField& flow) {
  EncodedFlow out(flow.width(), flow.height());
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) {
      Vec2f v = flow.at(x, y);
      float m = v.norm();
      float s = 0.f, c = 1.f;  // canonical angle for (near-)zero vectors
      if (m > kZeroFlowEps) {
        float theta = std::atan2(v.y, v.x);
        s = std::sin(theta);
        c = std::cos(theta);
      } else {
        m = m > 0.f ? m : 0.f;
      }
      out.ch.at(x, y, 0) = s;
      out.ch.at(x, y, 1) = c;
      out.ch.at(x, y, 2) = m;
    }
  return out;
}

// Inverse of encode_flow. Network outputs need not have exactly normalized
// angle channels, so (sin, cos) is renormalized before scaling by magnitude.
inline FlowField decode_flow(const EncodedFlow& enc) {
  FlowField out(enc.width(), enc.height());
  for (int y = 0; y < enc.height(); ++y)
    for (int x = 0; x < enc.width(); ++x) {
      float s = enc.ch.at(x, y, 0);
      float c = enc.ch.at(x, y, 1);
      float m = std::max(0.f, enc.ch.at(x, y, 2));
      float n = std::sqrt(s * s + c * c);
      if (n < kZeroFlowEps) {
        s = 0.f;
        c = 1.f;
      } else {
        s /= n;
        c /= n;
      }
      out.set(x, y, {m * c, m * s});
    }
  return out;
}

// Normalized distribution of flow magnitudes over cloud pixels.
inline std::vector<double> flow_magnitude_histogram(
    const FlowField& flow, const CloudMask& mask,
    const std::vector<double>& bin_edges) {
  if (flow.width() != mask.width || flow.height() != mask.height)
    throw PreconditionError("flow_magnitude_histogram: dimension mismatch");
  if (bin_edges.size() < 2)
    throw PreconditionError("flow_magnitude_histogram: need at least 2 bin edges");
  for (size_t i = 1; i < bin_edges.size(); ++i)
    if (!(bin_edges[i] > bin_edges[i - 1]))
      throw PreconditionError("flow_magnitude_histogram: edges must be strictly increasing");
  if (!(bin_edges.front() < 1.0))
    throw PreconditionError("flow_magnitude_histogram: first edge must be below 1 px (sub-pixel bins required)");

  std::vector<double> counts(bin_edges.size() - 1, 0.0);
  size_t total = 0;
  DiscDomain disc(flow.width());
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) {
      if (!mask.at(x, y) || !disc.valid(x, y)) continue;
      double m = flow.at(x, y).norm();
      // bin i covers [edge_i, edge_{i+1}); values outside the range clamp to
      // the end bins so every cloud pixel contributes
      size_t bin = 0;
      while (bin + 2 < bin_edges.size() && m >= bin_edges[bin + 1]) ++bin;
      counts[bin] += 1.0;
      ++total;
    }
  if (total == 0)
    throw PreconditionError("flow_magnitude_histogram: empty cloud mask");
  for (double& c : counts) c /= double(total);
  return counts;
}

namespace detail {

inline void write_u32le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
         uint32_t(b[3]) << 24;
}

inline void write_flow_raster(const std::string& path, const char magic[4],
                              const Raster& r) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("flow write: cannot open " + path);
  f.write(magic, 4);
  write_u32le(f, uint32_t(r.width));
  write_u32le(f, uint32_t(r.height));
  f.write(reinterpret_cast<const char*>(r.data.data()),
          std::streamsize(r.data.size() * sizeof(float)));
  if (!f) throw Error("flow write: failed for " + path);
}

inline Raster read_flow_raster(const std::string& path, const char magic[4],
                               int channels) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("flow read: cannot open " + path);
  char m[4];
  f.read(m, 4);
  if (!f || std::memcmp(m, magic, 4) != 0)
    throw ConfigError("flow read: bad magic in " + path);
  uint32_t w = read_u32le(f);
  uint32_t h = read_u32le(f);
  if (!f || w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16))
    throw ConfigError("flow read: bad header in " + path);
  Raster r(int(w), int(h), channels);
  f.read(reinterpret_cast<char*>(r.data.data()),
         std::streamsize(r.data.size() * sizeof(float)));
  if (!f) throw Error("flow read: truncated file " + path);
  return r;
}

}  // namespace detail

// On-disk formats: magic, u32 width, u32 height, row-major float32
// little-endian samples. "SKFL" carries (du, dv), "SKF3" the 3-channel
// encoding.
inline void write_flow(const std::string& path, const FlowField& f) {
  detail::write_flow_raster(path, "SKFL", f.uv);
}

inline FlowField read_flow(const std::string& path) {
  FlowField f;
  f.uv = detail::read_flow_raster(path, "SKFL", 2);
  return f;
}

inline void write_encoded_flow(const std::string& path, const EncodedFlow& e) {
  detail::write_flow_raster(path, "SKF3", e.ch);
}

inline EncodedFlow read_encoded_flow(const std::string& path) {
  EncodedFlow e;
  e.ch = detail::read_flow_raster(path, "SKF3", 3);
  return e;
}

}  // namespace skyflow
