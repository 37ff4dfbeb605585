#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "skyflow/tensor.hpp"

namespace skyflow {
namespace nn {

using MatRM =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

inline constexpr float kBnEps = 1e-5f;

// --- convolution ------------------------------------------------------------
// Weights are [out_c, in_c, k, k] flattened row-major; forward/backward run
// as im2col + GEMM.

struct ConvShape {
  int in_c, out_c, k, stride, pad;
  int out_dim(int in_dim) const { return (in_dim + 2 * pad - k) / stride + 1; }
};

inline void im2col(const Tensor& x, const ConvShape& s, MatRM& col) {
  const int oh = s.out_dim(x.h), ow = s.out_dim(x.w);
  const int K = s.in_c * s.k * s.k, N = oh * ow;
  col.resize(K, N);
#pragma omp parallel for schedule(static)
  for (int r = 0; r < K; ++r) {
    int kx = r % s.k;
    int ky = (r / s.k) % s.k;
    int ci = r / (s.k * s.k);
    float* dst = col.data() + size_t(r) * N;
    const float* src = x.plane(ci);
    for (int oy = 0; oy < oh; ++oy) {
      int iy = oy * s.stride + ky - s.pad;
      if (iy < 0 || iy >= x.h) {
        for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = 0.f;
        continue;
      }
      for (int ox = 0; ox < ow; ++ox) {
        int ix = ox * s.stride + kx - s.pad;
        dst[oy * ow + ox] =
            (ix >= 0 && ix < x.w) ? src[size_t(iy) * x.w + ix] : 0.f;
      }
    }
  }
}

inline void col2im(const MatRM& col, const ConvShape& s, Tensor& dx) {
  const int oh = s.out_dim(dx.h), ow = s.out_dim(dx.w);
  const int N = oh * ow;
  dx.zero();
  // each input channel owns a disjoint destination plane, so accumulation
  // parallelizes over channels without races (and stays bit-reproducible)
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < s.in_c; ++ci) {
    float* dst = dx.plane(ci);
    for (int r = ci * s.k * s.k; r < (ci + 1) * s.k * s.k; ++r) {
      int kx = r % s.k;
      int ky = (r / s.k) % s.k;
      const float* src = col.data() + size_t(r) * N;
      for (int oy = 0; oy < oh; ++oy) {
        int iy = oy * s.stride + ky - s.pad;
        if (iy < 0 || iy >= dx.h) continue;
        for (int ox = 0; ox < ow; ++ox) {
          int ix = ox * s.stride + kx - s.pad;
          if (ix >= 0 && ix < dx.w) dst[size_t(iy) * dx.w + ix] += src[oy * ow + ox];
        }
      }
    }
  }
}

struct ConvCache {
  MatRM col;  // K x N input patches
  int in_h = 0, in_w = 0;
};

inline Tensor conv_forward(const Tensor& x, const ConvShape& s,
                           const std::vector<float>& w,
                           const std::vector<float>& b, ConvCache* cache) {
  const int oh = s.out_dim(x.h), ow = s.out_dim(x.w);
  const int K = s.in_c * s.k * s.k, N = oh * ow;
  MatRM local_col;
  MatRM& col = cache ? cache->col : local_col;
  im2col(x, s, col);
  if (cache) {
    cache->in_h = x.h;
    cache->in_w = x.w;
  }
  Tensor y(s.out_c, oh, ow);
  CMapRM wm(w.data(), s.out_c, K);
  MapRM ym(y.v.data(), s.out_c, N);
  ym.noalias() = wm * col;
  for (int oc = 0; oc < s.out_c; ++oc) {
    float bias = b[oc];
    float* p = y.plane(oc);
    for (int i = 0; i < N; ++i) p[i] += bias;
  }
  return y;
}

// Accumulates into dw/db; returns gradient w.r.t. the input.
inline Tensor conv_backward(const Tensor& dy, const ConvShape& s,
                            const std::vector<float>& w, ConvCache& cache,
                            std::vector<float>& dw, std::vector<float>& db) {
  const int K = s.in_c * s.k * s.k, N = dy.h * dy.w;
  CMapRM dym(dy.v.data(), s.out_c, N);
  MapRM dwm(dw.data(), s.out_c, K);
  dwm.noalias() += dym * cache.col.transpose();
  for (int oc = 0; oc < s.out_c; ++oc) {
    const float* p = dy.plane(oc);
    double acc = 0.0;
    for (int i = 0; i < N; ++i) acc += p[i];
    db[oc] += float(acc);
  }
  CMapRM wm(w.data(), s.out_c, K);
  MatRM dcol(K, N);
  dcol.noalias() = wm.transpose() * dym;
  Tensor dx(s.in_c, cache.in_h, cache.in_w);
  col2im(dcol, s, dx);
  return dx;
}

// --- batch normalization ----------------------------------------------------
// Per-channel statistics over the spatial extent of one sample. Running
// statistics are blended with momentum 0.1 and used in inference mode.

struct BnCache {
  std::vector<float> mean, inv_std;  // per channel
  Tensor xhat;
  bool training = false;
};

inline Tensor bn_forward(const Tensor& x, const std::vector<float>& gamma,
                         const std::vector<float>& beta,
                         std::vector<float>& running_mean,
                         std::vector<float>& running_var, bool training,
                         float momentum, BnCache* cache) {
  Tensor y(x.c, x.h, x.w);
  const size_t n = x.plane_size();
  if (cache) {
    cache->mean.resize(x.c);
    cache->inv_std.resize(x.c);
    cache->xhat = Tensor(x.c, x.h, x.w);
    cache->training = training;
  }
  for (int c = 0; c < x.c; ++c) {
    const float* px = x.plane(c);
    float* py = y.plane(c);
    float mu, var;
    if (training) {
      double s = 0.0;
      for (size_t i = 0; i < n; ++i) s += px[i];
      mu = float(s / double(n));
      double v = 0.0;
      for (size_t i = 0; i < n; ++i) {
        double d = px[i] - mu;
        v += d * d;
      }
      var = float(v / double(n));
      running_mean[c] = (1.f - momentum) * running_mean[c] + momentum * mu;
      running_var[c] = (1.f - momentum) * running_var[c] + momentum * var;
    } else {
      mu = running_mean[c];
      var = running_var[c];
    }
    float inv_std = 1.f / std::sqrt(var + kBnEps);
    float g = gamma[c], bt = beta[c];
    float* xh = cache ? cache->xhat.plane(c) : nullptr;
    for (size_t i = 0; i < n; ++i) {
      float xhat = (px[i] - mu) * inv_std;
      if (xh) xh[i] = xhat;
      py[i] = g * xhat + bt;
    }
    if (cache) {
      cache->mean[c] = mu;
      cache->inv_std[c] = inv_std;
    }
  }
  return y;
}

inline Tensor bn_backward(const Tensor& dy, const std::vector<float>& gamma,
                          const BnCache& cache, std::vector<float>& dgamma,
                          std::vector<float>& dbeta) {
  Tensor dx(dy.c, dy.h, dy.w);
  const size_t n = dy.plane_size();
  for (int c = 0; c < dy.c; ++c) {
    const float* pdy = dy.plane(c);
    const float* xh = cache.xhat.plane(c);
    float* pdx = dx.plane(c);
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (size_t i = 0; i < n; ++i) {
      sum_dy += pdy[i];
      sum_dy_xhat += pdy[i] * xh[i];
    }
    dgamma[c] += float(sum_dy_xhat);
    dbeta[c] += float(sum_dy);
    float g = gamma[c], inv_std = cache.inv_std[c];
    if (cache.training) {
      float m_dy = float(sum_dy / double(n));
      float m_dyx = float(sum_dy_xhat / double(n));
      for (size_t i = 0; i < n; ++i)
        pdx[i] = g * inv_std * (pdy[i] - m_dy - xh[i] * m_dyx);
    } else {
      for (size_t i = 0; i < n; ++i) pdx[i] = g * inv_std * pdy[i];
    }
  }
  return dx;
}

// --- activations -------------------------------------------------------------

inline Tensor leaky_relu(const Tensor& x, float slope) {
  Tensor y = x;
  for (float& v : y.v) v = v >= 0.f ? v : slope * v;
  return y;
}

inline Tensor leaky_relu_backward(const Tensor& dy, const Tensor& x,
                                  float slope) {
  Tensor dx = dy;
  for (size_t i = 0; i < dx.v.size(); ++i)
    if (x.v[i] < 0.f) dx.v[i] *= slope;
  return dx;
}

inline Tensor relu(const Tensor& x) { return leaky_relu(x, 0.f); }

inline Tensor relu_backward(const Tensor& dy, const Tensor& x) {
  return leaky_relu_backward(dy, x, 0.f);
}

inline float softplus(float x) {
  return x > 20.f ? x : std::log1p(std::exp(x));
}

// --- bilinear x2 upsampling ---------------------------------------------------
// Half-pixel-center sampling; the backward pass is the exact transpose.

inline Tensor upsample2_forward(const Tensor& x) {
  Tensor y(x.c, x.h * 2, x.w * 2);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < x.c; ++c) {
    const float* src = x.plane(c);
    float* dst = y.plane(c);
    for (int oy = 0; oy < y.h; ++oy) {
      float fy = (oy + 0.5f) * 0.5f - 0.5f;
      int y0 = int(std::floor(fy));
      float ay = fy - y0;
      int y0c = std::clamp(y0, 0, x.h - 1);
      int y1c = std::clamp(y0 + 1, 0, x.h - 1);
      for (int ox = 0; ox < y.w; ++ox) {
        float fx = (ox + 0.5f) * 0.5f - 0.5f;
        int x0 = int(std::floor(fx));
        float ax = fx - x0;
        int x0c = std::clamp(x0, 0, x.w - 1);
        int x1c = std::clamp(x0 + 1, 0, x.w - 1);
        float top = src[size_t(y0c) * x.w + x0c] * (1 - ax) +
                    src[size_t(y0c) * x.w + x1c] * ax;
        float bot = src[size_t(y1c) * x.w + x0c] * (1 - ax) +
                    src[size_t(y1c) * x.w + x1c] * ax;
        dst[size_t(oy) * y.w + ox] = top * (1 - ay) + bot * ay;
      }
    }
  }
  return y;
}

inline Tensor upsample2_backward(const Tensor& dy, int in_h, int in_w) {
  Tensor dx(dy.c, in_h, in_w);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < dy.c; ++c) {
    const float* src = dy.plane(c);
    float* dst = dx.plane(c);
    for (int oy = 0; oy < dy.h; ++oy) {
      float fy = (oy + 0.5f) * 0.5f - 0.5f;
      int y0 = int(std::floor(fy));
      float ay = fy - y0;
      int y0c = std::clamp(y0, 0, in_h - 1);
      int y1c = std::clamp(y0 + 1, 0, in_h - 1);
      for (int ox = 0; ox < dy.w; ++ox) {
        float fx = (ox + 0.5f) * 0.5f - 0.5f;
        int x0 = int(std::floor(fx));
        float ax = fx - x0;
        int x0c = std::clamp(x0, 0, in_w - 1);
        int x1c = std::clamp(x0 + 1, 0, in_w - 1);
        float g = src[size_t(oy) * dy.w + ox];
        dst[size_t(y0c) * in_w + x0c] += g * (1 - ax) * (1 - ay);
        dst[size_t(y0c) * in_w + x1c] += g * ax * (1 - ay);
        dst[size_t(y1c) * in_w + x0c] += g * (1 - ax) * ay;
        dst[size_t(y1c) * in_w + x1c] += g * ax * ay;
      }
    }
  }
  return dx;
}

}  // namespace nn
}  // namespace skyflow
