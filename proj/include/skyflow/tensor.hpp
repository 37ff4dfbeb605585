#pragma once

#include <vector>

#include "skyflow/raster.hpp"

namespace skyflow {

// Planar CHW float tensor used inside the networks.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_), v(size_t(c_) * h_ * w_, 0.f) {}

  size_t size() const { return v.size(); }
  size_t plane_size() const { return size_t(h) * w; }

  float* plane(int ci) { return v.data() + size_t(ci) * plane_size(); }
  const float* plane(int ci) const { return v.data() + size_t(ci) * plane_size(); }

  float& at(int ci, int y, int x) { return v[(size_t(ci) * h + y) * w + x]; }
  float at(int ci, int y, int x) const { return v[(size_t(ci) * h + y) * w + x]; }

  void zero() { std::fill(v.begin(), v.end(), 0.f); }
};

inline Tensor raster_to_tensor(const Raster& r) {
  Tensor t(r.channels, r.height, r.width);
  for (int c = 0; c < r.channels; ++c)
    for (int y = 0; y < r.height; ++y)
      for (int x = 0; x < r.width; ++x) t.at(c, y, x) = r.at(x, y, c);
  return t;
}

inline Raster tensor_to_raster(const Tensor& t) {
  Raster r(t.w, t.h, t.c);
  for (int c = 0; c < t.c; ++c)
    for (int y = 0; y < t.h; ++y)
      for (int x = 0; x < t.w; ++x) r.at(x, y, c) = t.at(c, y, x);
  return r;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  Tensor out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
  return out;
}

}  // namespace skyflow
