#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "skyflow/raster.hpp"

namespace skyflow {

// Hemispherical fisheye RGB frame, the unit of all prediction. Channels live
// in [0,1]; pixels outside the inscribed disc are exactly (0,0,0).
struct SkyImage {
  Raster rgb;  // 3 channels

  SkyImage() = default;
  explicit SkyImage(int size) : rgb(size, size, 3) {}

  int size() const { return rgb.width; }
  DiscDomain disc() const { return DiscDomain(rgb.width); }
  bool valid(int x, int y) const { return disc().valid(x, y); }

  float& at(int x, int y, int c) { return rgb.at(x, y, c); }
  float at(int x, int y, int c) const { return rgb.at(x, y, c); }

  // Clamp channels to [0,1] and force invalid pixels to zero, restoring the
  // type invariants after raw pixel edits.
  void enforce_invariants() {
    DiscDomain d = disc();
    for (int y = 0; y < rgb.height; ++y)
      for (int x = 0; x < rgb.width; ++x) {
        bool ok = d.valid(x, y);
        for (int c = 0; c < 3; ++c) {
          float& v = rgb.at(x, y, c);
          v = ok ? std::clamp(v, 0.f, 1.f) : 0.f;
        }
      }
  }

  bool obeys_invariants() const {
    if (rgb.width != rgb.height || rgb.channels != 3) return false;
    DiscDomain d = disc();
    for (int y = 0; y < rgb.height; ++y)
      for (int x = 0; x < rgb.width; ++x)
        for (int c = 0; c < 3; ++c) {
          float v = rgb.at(x, y, c);
          if (d.valid(x, y)) {
            if (!(v >= 0.f && v <= 1.f)) return false;
          } else if (v != 0.f) {
            return false;
          }
        }
    return true;
  }
};

// Binary cloud/sky classification (1 = cloud). Zero on all out-of-disc pixels.
struct CloudMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> bits;

  CloudMask() = default;
  CloudMask(int w, int h) : width(w), height(h), bits(size_t(w) * h, 0) {}

  uint8_t at(int x, int y) const { return bits[size_t(y) * width + x]; }
  uint8_t& at(int x, int y) { return bits[size_t(y) * width + x]; }

  size_t count() const {
    size_t n = 0;
    for (uint8_t b : bits) n += b;
    return n;
  }
};

inline constexpr float kDefaultCloudThreshold = 0.46f;

// Red/blue ratio thresholding. A pixel is cloud iff R/B > threshold.
// Degenerate B=0 is defined as ratio +inf when R>0 and 0 when R=0, so the
// mask never sees a NaN.
inline CloudMask compute_cloud_mask(const SkyImage& img,
                                    float threshold = kDefaultCloudThreshold) {
  if (threshold <= 0.f)
    throw PreconditionError("compute_cloud_mask: threshold must be > 0");
  CloudMask mask(img.rgb.width, img.rgb.height);
  DiscDomain disc = img.disc();
  for (int y = 0; y < img.rgb.height; ++y)
    for (int x = 0; x < img.rgb.width; ++x) {
      if (!disc.valid(x, y)) continue;
      float r = img.at(x, y, 0);
      float b = img.at(x, y, 2);
      bool cloud;
      if (b > 0.f)
        cloud = r / b > threshold;
      else
        cloud = r > 0.f;  // ratio treated as +inf when R>0, 0 when R=0
      mask.at(x, y) = cloud ? 1 : 0;
    }
  return mask;
}

enum class ToneCurveKind { Identity, Gamma, ExponentialExpansion };

// Monotone bijection between [0, scale] radiance values and the [0,1]
// working domain. forward01 maps into [0,1], inverse01 maps back; both fix 0.
struct ToneCurve {
  ToneCurveKind kind = ToneCurveKind::Identity;
  double exponent = 2.2;  // gamma exponent, or steepness k for the exponential
  double scale = 1.0;     // radiance value that maps to 1.0

  double forward01(double x) const {
    double t = x / scale;
    switch (kind) {
      case ToneCurveKind::Identity:
        return t;
      case ToneCurveKind::Gamma:
        return t <= 0.0 ? 0.0 : std::pow(t, 1.0 / exponent);
      case ToneCurveKind::ExponentialExpansion: {
        // (1 - exp(-k t)) / (1 - exp(-k)): bijective [0,1] -> [0,1]
        double k = exponent;
        return (1.0 - std::exp(-k * t)) / (1.0 - std::exp(-k));
      }
    }
    return t;
  }

  double inverse01(double y) const {
    switch (kind) {
      case ToneCurveKind::Identity:
        return y * scale;
      case ToneCurveKind::Gamma:
        return (y <= 0.0 ? 0.0 : std::pow(y, exponent)) * scale;
      case ToneCurveKind::ExponentialExpansion: {
        double k = exponent;
        double t = -std::log(1.0 - y * (1.0 - std::exp(-k))) / k;
        return t * scale;
      }
    }
    return y * scale;
  }

  static ToneCurve identity() { return ToneCurve{}; }
  static ToneCurve gamma(double exponent, double scale = 1.0) {
    return ToneCurve{ToneCurveKind::Gamma, exponent, scale};
  }
  static ToneCurve exponential(double k, double scale = 1.0) {
    return ToneCurve{ToneCurveKind::ExponentialExpansion, k, scale};
  }
};

inline const char* tone_curve_kind_name(ToneCurveKind k) {
  switch (k) {
    case ToneCurveKind::Identity: return "identity";
    case ToneCurveKind::Gamma: return "gamma";
    case ToneCurveKind::ExponentialExpansion: return "exponential";
  }
  return "identity";
}

inline ToneCurveKind tone_curve_kind_from_name(const std::string& s) {
  if (s == "identity") return ToneCurveKind::Identity;
  if (s == "gamma") return ToneCurveKind::Gamma;
  if (s == "exponential") return ToneCurveKind::ExponentialExpansion;
  throw ConfigError("unknown tone curve kind: " + s);
}

// Map a raw HDR raster into the [0,1] working domain. Values above the
// curve's scale clamp to 1; ordering within each channel is preserved.
inline SkyImage normalize_hdr(const Raster& raw, const ToneCurve& curve) {
  if (raw.width != raw.height || raw.channels != 3)
    throw PreconditionError("normalize_hdr: expected a square 3-channel raster");
  SkyImage out(raw.width);
  DiscDomain disc(raw.width);
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x) {
      if (!disc.valid(x, y)) continue;
      for (int c = 0; c < 3; ++c) {
        float v = raw.at(x, y, c);
        if (!std::isfinite(v))
          throw NumericError("normalize_hdr: non-finite input at pixel (" +
                             std::to_string(x) + "," + std::to_string(y) + ")");
        if (v < 0.f)
          throw PreconditionError("normalize_hdr: negative input at pixel (" +
                                  std::to_string(x) + "," + std::to_string(y) +
                                  ")");
        out.at(x, y, c) = float(std::clamp(curve.forward01(v), 0.0, 1.0));
      }
    }
  return out;
}

// Inverse of normalize_hdr, rescaled so a working-domain value of 1.0 maps to
// `peak`. Invalid pixels stay zero.
inline Raster expand_ldr(const SkyImage& img, const ToneCurve& curve,
                         double peak) {
  if (peak <= 0.0) throw PreconditionError("expand_ldr: peak must be > 0");
  Raster out(img.rgb.width, img.rgb.height, 3);
  DiscDomain disc = img.disc();
  double gain = peak / curve.scale;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      if (!disc.valid(x, y)) continue;
      for (int c = 0; c < 3; ++c)
        out.at(x, y, c) = float(curve.inverse01(img.at(x, y, c)) * gain);
    }
  return out;
}

}  // namespace skyflow
