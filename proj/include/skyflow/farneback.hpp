#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "skyflow/flow_field.hpp"
#include "skyflow/raster.hpp"
#include "skyflow/sky_image.hpp"

namespace skyflow {
namespace fb {

// --- small raster utilities (single channel) -------------------------------

inline Raster to_luminance_255(const SkyImage& img) {
  Raster out(img.rgb.width, img.rgb.height, 1);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(x, y, 0) =
          255.f * luminance(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
  return out;
}

inline int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

inline Raster gaussian_blur(const Raster& src, double sigma) {
  if (sigma <= 0.0) return src;
  int radius = std::max(1, int(std::lround(sigma * 2.5)));
  std::vector<float> k(2 * radius + 1);
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = float(std::exp(-0.5 * i * i / (sigma * sigma)));
    s += k[i + radius];
  }
  for (float& v : k) v = float(v / s);

  Raster tmp(src.width, src.height, 1), out(src.width, src.height, 1);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * src.at(reflect101(x + i, src.width), y, 0);
      tmp.at(x, y, 0) = acc;
    }
#pragma omp parallel for schedule(static)
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * tmp.at(x, reflect101(y + i, src.height), 0);
      out.at(x, y, 0) = acc;
    }
  return out;
}

inline Raster resize_bilinear(const Raster& src, int nw, int nh) {
  Raster out(nw, nh, src.channels);
  double sx = double(src.width) / nw;
  double sy = double(src.height) / nh;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      double fy = (y + 0.5) * sy - 0.5;
      int x0 = int(std::floor(fx));
      int y0 = int(std::floor(fy));
      double ax = fx - x0;
      double ay = fy - y0;
      int x1 = std::clamp(x0 + 1, 0, src.width - 1);
      int y1 = std::clamp(y0 + 1, 0, src.height - 1);
      x0 = std::clamp(x0, 0, src.width - 1);
      y0 = std::clamp(y0, 0, src.height - 1);
      for (int c = 0; c < src.channels; ++c) {
        double top = src.at(x0, y0, c) * (1 - ax) + src.at(x1, y0, c) * ax;
        double bot = src.at(x0, y1, c) * (1 - ax) + src.at(x1, y1, c) * ax;
        out.at(x, y, c) = float(top * (1 - ay) + bot * ay);
      }
    }
  return out;
}

// --- polynomial expansion ---------------------------------------------------
//
// Fits f(p + d) ~ c + bx*dx + by*dy + cxx*dx^2 + cyy*dy^2 + cxy*dx*dy per
// pixel by Gaussian-weighted least squares. Out-of-disc pixels carry zero
// certainty and are excluded from the fit; taps beyond the bounding square
// reflect back inside. Output channels: [by, bx, cyy, cxx, cxy].

struct PolyExp {
  Raster coeffs;  // 5 channels
};

namespace detail {

// Cholesky solve of a symmetric positive definite 6x6 system.
inline bool solve6(const double G[6][6], const double v[6], double r[6]) {
  double L[6][6] = {};
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = G[i][j];
      for (int k = 0; k < j; ++k) s -= L[i][k] * L[j][k];
      if (i == j) {
        if (s <= 1e-12) return false;
        L[i][i] = std::sqrt(s);
      } else {
        L[i][j] = s / L[j][j];
      }
    }
  }
  double y[6];
  for (int i = 0; i < 6; ++i) {
    double s = v[i];
    for (int k = 0; k < i; ++k) s -= L[i][k] * y[k];
    y[i] = s / L[i][i];
  }
  for (int i = 5; i >= 0; --i) {
    double s = y[i];
    for (int k = i + 1; k < 6; ++k) s -= L[k][i] * r[k];
    r[i] = s / L[i][i];
  }
  return true;
}

}  // namespace detail

inline PolyExp poly_expansion(const Raster& img, const std::vector<uint8_t>& certain,
                              int n, double sigma) {
  const int w = img.width, h = img.height;
  if (sigma < 1e-6) sigma = n * 0.3;

  std::vector<double> g(2 * n + 1);
  double s = 0.0;
  for (int i = -n; i <= n; ++i) {
    g[i + n] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += g[i + n];
  }
  for (double& v : g) v /= s;

  // Gram matrix of the all-certain interior: sparse with four distinct
  // entries, same structure as the classic implementation.
  double m2 = 0, m4 = 0, m22 = 0;
  for (int i = -n; i <= n; ++i) {
    m2 += g[i + n] * i * i;
    m4 += g[i + n] * i * i * i * i;
  }
  m22 = m2 * m2;  // separable: sum g(x)g(y) x^2 y^2
  double G0[6][6] = {};
  G0[0][0] = 1.0;
  G0[1][1] = G0[2][2] = m2;
  G0[0][3] = G0[3][0] = G0[0][4] = G0[4][0] = m2;
  G0[3][3] = G0[4][4] = m4;
  G0[3][4] = G0[4][3] = m22;
  G0[5][5] = m22;
  // inverse entries used on the fast path; basis order (1, x, y, x^2, y^2, xy)
  // with the symmetric 3x3 block {1, x^2, y^2} inverted exactly
  double B[3][3] = {{1.0, m2, m2}, {m2, m4, m22}, {m2, m22, m4}};
  double invB[3][3];
  {
    double d = B[0][0] * (B[1][1] * B[2][2] - B[1][2] * B[2][1]) -
               B[0][1] * (B[1][0] * B[2][2] - B[1][2] * B[2][0]) +
               B[0][2] * (B[1][0] * B[2][1] - B[1][1] * B[2][0]);
    double id = 1.0 / d;
    invB[0][0] = (B[1][1] * B[2][2] - B[1][2] * B[2][1]) * id;
    invB[0][1] = (B[0][2] * B[2][1] - B[0][1] * B[2][2]) * id;
    invB[0][2] = (B[0][1] * B[1][2] - B[0][2] * B[1][1]) * id;
    invB[1][1] = (B[0][0] * B[2][2] - B[0][2] * B[2][0]) * id;
    invB[1][2] = (B[0][2] * B[1][0] - B[0][0] * B[1][2]) * id;
    invB[2][2] = (B[0][0] * B[1][1] - B[0][1] * B[1][0]) * id;
    invB[1][0] = invB[0][1];
    invB[2][0] = invB[0][2];
    invB[2][1] = invB[1][2];
  }
  const double ig_lin = 1.0 / m2;    // for the x and y coefficients
  const double ig_xy = 1.0 / m22;    // for the xy coefficient
  const double ig_c2 = invB[1][0];   // constant-moment contribution to x^2/y^2
  const double ig_q = invB[1][1];    // own-moment contribution
  const double ig_qc = invB[1][2];   // cross quadratic contribution

  // Certainty-weighted image and moment planes. T[a][b] = sum of
  // w(k) kx^a ky^b (c*f)(p+k) for a+b <= 2; vertical then horizontal passes.
  std::vector<double> cf(size_t(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      size_t i = size_t(y) * w + x;
      cf[i] = certain[i] ? double(img.at(x, y, 0)) : 0.0;
    }

  // vertical: beta = 0,1,2
  std::vector<double> v0(size_t(w) * h), v1(size_t(w) * h), v2(size_t(w) * h);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double a0 = 0, a1 = 0, a2 = 0;
      for (int k = -n; k <= n; ++k) {
        double val = cf[size_t(reflect101(y + k, h)) * w + x];
        double gv = g[k + n];
        a0 += gv * val;
        a1 += gv * k * val;
        a2 += gv * k * k * val;
      }
      size_t i = size_t(y) * w + x;
      v0[i] = a0;
      v1[i] = a1;
      v2[i] = a2;
    }

  PolyExp out;
  out.coeffs = Raster(w, h, 5);

  // Pixels whose kernel support is entirely certain use the precomputed
  // inverse; the rest solve their own weighted normal equations.
  std::vector<uint8_t> interior(size_t(w) * h, 0);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (y - n < 0 || y + n >= h || x - n < 0 || x + n >= w) continue;
      bool all = true;
      for (int j = -n; j <= n && all; ++j)
        for (int i = -n; i <= n; ++i)
          if (!certain[size_t(y + j) * w + (x + i)]) {
            all = false;
            break;
          }
      interior[size_t(y) * w + x] = all;
    }

#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // horizontal pass: moments T00,T10,T01,T20,T02,T11
      double t00 = 0, t10 = 0, t01 = 0, t20 = 0, t02 = 0, t11 = 0;
      for (int k = -n; k <= n; ++k) {
        size_t i = size_t(y) * w + reflect101(x + k, w);
        double gv = g[k + n];
        t00 += gv * v0[i];
        t10 += gv * k * v0[i];
        t20 += gv * k * k * v0[i];
        t01 += gv * v1[i];
        t11 += gv * k * v1[i];
        t02 += gv * v2[i];
      }
      size_t pi = size_t(y) * w + x;
      double bx, by, cxx, cyy, cxy;
      if (interior[pi]) {
        bx = t10 * ig_lin;
        by = t01 * ig_lin;
        cxx = t00 * ig_c2 + t20 * ig_q + t02 * ig_qc;
        cyy = t00 * ig_c2 + t02 * ig_q + t20 * ig_qc;
        cxy = t11 * ig_xy;
      } else if (!certain[pi]) {
        bx = by = cxx = cyy = cxy = 0.0;
      } else {
        // weighted Gram from the certainty plane within the support
        double S[5][5] = {};  // S[a][b], a+b <= 4
        for (int j = -n; j <= n; ++j) {
          int yy = reflect101(y + j, h);
          for (int i = -n; i <= n; ++i) {
            int xx = reflect101(x + i, w);
            if (!certain[size_t(yy) * w + xx]) continue;
            double wgt = g[i + n] * g[j + n];
            double xp[5] = {1, double(i), double(i) * i, double(i) * i * i,
                            double(i) * i * i * i};
            double yp[5] = {1, double(j), double(j) * j, double(j) * j * j,
                            double(j) * j * j * j};
            for (int a = 0; a <= 4; ++a)
              for (int b = 0; a + b <= 4; ++b) S[a][b] += wgt * xp[a] * yp[b];
          }
        }
        double G[6][6] = {};
        G[0][0] = S[0][0]; G[0][1] = S[1][0]; G[0][2] = S[0][1];
        G[0][3] = S[2][0]; G[0][4] = S[0][2]; G[0][5] = S[1][1];
        G[1][1] = S[2][0]; G[1][2] = S[1][1]; G[1][3] = S[3][0];
        G[1][4] = S[1][2]; G[1][5] = S[2][1];
        G[2][2] = S[0][2]; G[2][3] = S[2][1]; G[2][4] = S[0][3];
        G[2][5] = S[1][2];
        G[3][3] = S[4][0]; G[3][4] = S[2][2]; G[3][5] = S[3][1];
        G[4][4] = S[0][4]; G[4][5] = S[1][3];
        G[5][5] = S[2][2];
        for (int a = 0; a < 6; ++a)
          for (int b = 0; b < a; ++b) G[a][b] = G[b][a];
        double v[6] = {t00, t10, t01, t20, t02, t11};
        double r[6];
        if (detail::solve6(G, v, r)) {
          bx = r[1];
          by = r[2];
          cxx = r[3];
          cyy = r[4];
          cxy = r[5];
        } else {
          bx = by = cxx = cyy = cxy = 0.0;
        }
      }
      out.coeffs.at(x, y, 0) = float(by);
      out.coeffs.at(x, y, 1) = float(bx);
      out.coeffs.at(x, y, 2) = float(cyy);
      out.coeffs.at(x, y, 3) = float(cxx);
      out.coeffs.at(x, y, 4) = float(cxy);
    }
  }
  return out;
}

// --- displacement estimation ------------------------------------------------
//
// Per-pixel normal equations from the polynomial coefficient differences,
// box-aggregated over the window, solved as a regularized 2x2 system.

inline void update_matrices(const Raster& r0, const Raster& r1,
                            const std::vector<uint8_t>& valid,
                            const Raster& flow, Raster& m) {
  const int w = flow.width, h = flow.height;
  constexpr int kBorder = 5;
  static const float kBorderScale[kBorder] = {0.14f, 0.14f, 0.4472f, 0.4472f,
                                              0.4472f};
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!valid[size_t(y) * w + x]) {
        for (int c = 0; c < 5; ++c) m.at(x, y, c) = 0.f;
        continue;
      }
      float dx = flow.at(x, y, 0), dy = flow.at(x, y, 1);
      int x1 = int(std::lround(x + dx));
      int y1 = int(std::lround(y + dy));
      float r2, r3, r4, r5, r6;
      bool target_ok = x1 >= 0 && x1 < w && y1 >= 0 && y1 < h &&
                       valid[size_t(y1) * w + x1];
      if (target_ok) {
        r2 = r1.at(x1, y1, 0);
        r3 = r1.at(x1, y1, 1);
        r4 = 0.5f * (r0.at(x, y, 2) + r1.at(x1, y1, 2));
        r5 = 0.5f * (r0.at(x, y, 3) + r1.at(x1, y1, 3));
        r6 = 0.25f * (r0.at(x, y, 4) + r1.at(x1, y1, 4));
      } else {
        r2 = r3 = 0.f;
        r4 = r0.at(x, y, 2);
        r5 = r0.at(x, y, 3);
        r6 = r0.at(x, y, 4) * 0.5f;
      }
      // channel order [by, bx, cyy, cxx, cxy]: r2 is the y equation
      r2 = (r0.at(x, y, 0) - r2) * 0.5f;
      r3 = (r0.at(x, y, 1) - r3) * 0.5f;
      r2 += r4 * dy + r6 * dx;
      r3 += r6 * dy + r5 * dx;

      if (x < kBorder || x >= w - kBorder || y < kBorder || y >= h - kBorder) {
        float scale = (x < kBorder ? kBorderScale[x] : 1.f) *
                      (x >= w - kBorder ? kBorderScale[w - x - 1] : 1.f) *
                      (y < kBorder ? kBorderScale[y] : 1.f) *
                      (y >= h - kBorder ? kBorderScale[h - y - 1] : 1.f);
        r2 *= scale;
        r3 *= scale;
        r4 *= scale;
        r5 *= scale;
        r6 *= scale;
      }
      m.at(x, y, 0) = r4 * r4 + r6 * r6;        // G11
      m.at(x, y, 1) = (r4 + r5) * r6;           // G12
      m.at(x, y, 2) = r5 * r5 + r6 * r6;        // G22
      m.at(x, y, 3) = r4 * r2 + r6 * r3;        // h1 (y)
      m.at(x, y, 4) = r6 * r2 + r5 * r3;        // h2 (x)
    }
  }
}

inline void box_blur_solve(const Raster& m, int window, Raster& flow) {
  const int w = flow.width, h = flow.height;
  const int r = window / 2;
  const double scale = 1.0 / (double(window) * window);

  // vertical running sums per channel, replicate rows
  Raster vs(w, h, 5);
#pragma omp parallel for schedule(static)
  for (int x = 0; x < w; ++x) {
    double acc[5] = {};
    for (int j = -r; j <= r; ++j) {
      int yy = std::clamp(j, 0, h - 1);
      for (int c = 0; c < 5; ++c) acc[c] += m.at(x, yy, c);
    }
    for (int y = 0; y < h; ++y) {
      for (int c = 0; c < 5; ++c) vs.at(x, y, c) = float(acc[c]);
      int add = std::clamp(y + r + 1, 0, h - 1);
      int sub = std::clamp(y - r, 0, h - 1);
      for (int c = 0; c < 5; ++c)
        acc[c] += m.at(x, add, c) - m.at(x, sub, c);
    }
  }
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    double acc[5] = {};
    for (int i = -r; i <= r; ++i) {
      int xx = std::clamp(i, 0, w - 1);
      for (int c = 0; c < 5; ++c) acc[c] += vs.at(xx, y, c);
    }
    for (int x = 0; x < w; ++x) {
      double g11 = acc[0] * scale, g12 = acc[1] * scale, g22 = acc[2] * scale;
      double h1 = acc[3] * scale, h2 = acc[4] * scale;
      double idet = 1.0 / (g11 * g22 - g12 * g12 + 1e-3);
      flow.at(x, y, 0) = float((g11 * h2 - g12 * h1) * idet);  // dx
      flow.at(x, y, 1) = float((g22 * h1 - g12 * h2) * idet);  // dy
      int add = std::clamp(x + r + 1, 0, w - 1);
      int sub = std::clamp(x - r, 0, w - 1);
      for (int c = 0; c < 5; ++c)
        acc[c] += vs.at(add, y, c) - vs.at(sub, y, c);
    }
  }
}

}  // namespace fb

// Dense optical flow a -> b by polynomial expansion, coarse-to-fine.
// Both frames are converted to luminance internally; the output field is
// zeroed outside the valid disc.
//
// Pyramid smoothing and downsampling are certainty-normalized: the frame is
// blurred as blur(c*f)/blur(c) with c the disc indicator, so the static dark
// region outside the disc never bleeds into level images and cannot anchor
// spurious zero-motion evidence near the boundary.
inline FlowField farneback_flow(const SkyImage& a, const SkyImage& b,
                                const FarnebackParams& params = {}) {
  if (a.rgb.width != b.rgb.width || a.rgb.height != b.rgb.height)
    throw PreconditionError("farneback_flow: dimension mismatch");
  params.validate();

  Raster ga = fb::to_luminance_255(a);
  Raster gb = fb::to_luminance_255(b);
  const int full = ga.width;

  Raster weight(full, full, 1);
  {
    auto valid = disc_validity(full);
    for (size_t i = 0; i < valid.size(); ++i) {
      weight.data[i] = valid[i] ? 1.f : 0.f;
      ga.data[i] *= weight.data[i];
      gb.data[i] *= weight.data[i];
    }
  }

  int levels = 0;
  {
    double s = 1.0;
    for (int k = 0; k < params.pyramid_levels; ++k) {
      s *= params.pyramid_scale;
      if (full * s < 32.0) break;
      ++levels;
    }
  }

  Raster flow;  // 2 channels at the current level
  for (int k = levels; k >= 0; --k) {
    double scale = std::pow(params.pyramid_scale, k);
    int lw = std::max(2, int(std::lround(full * scale)));

    Raster level_flow(lw, lw, 2);
    if (flow.width == 0) {
      // zero init at the coarsest level
    } else {
      level_flow = fb::resize_bilinear(flow, lw, lw);
      float gain = float(1.0 / params.pyramid_scale);
      for (float& v : level_flow.data) v *= gain;
    }

    double sigma = (1.0 / scale - 1.0) * 0.5;
    Raster la = fb::resize_bilinear(fb::gaussian_blur(ga, sigma), lw, lw);
    Raster lb = fb::resize_bilinear(fb::gaussian_blur(gb, sigma), lw, lw);
    Raster lc = fb::resize_bilinear(fb::gaussian_blur(weight, sigma), lw, lw);
    std::vector<uint8_t> certain = disc_validity(lw);
    for (int y = 0; y < lw; ++y)
      for (int x = 0; x < lw; ++x) {
        float c = lc.at(x, y, 0);
        if (c > 0.05f) {
          la.at(x, y, 0) /= c;
          lb.at(x, y, 0) /= c;
        } else {
          la.at(x, y, 0) = 0.f;
          lb.at(x, y, 0) = 0.f;
        }
        size_t i = size_t(y) * lw + x;
        certain[i] = certain[i] && c > 0.5f;
      }

    fb::PolyExp r0 = fb::poly_expansion(la, certain, params.poly_n, params.poly_sigma);
    fb::PolyExp r1 = fb::poly_expansion(lb, certain, params.poly_n, params.poly_sigma);

    Raster m(lw, lw, 5);
    fb::update_matrices(r0.coeffs, r1.coeffs, certain, level_flow, m);
    for (int it = 0; it < params.iterations; ++it) {
      fb::box_blur_solve(m, params.window, level_flow);
      if (it + 1 < params.iterations)
        fb::update_matrices(r0.coeffs, r1.coeffs, certain, level_flow, m);
    }
    flow = std::move(level_flow);
  }

  FlowField out(full, full);
  DiscDomain disc(full);
  for (int y = 0; y < full; ++y)
    for (int x = 0; x < full; ++x) {
      if (!disc.valid(x, y)) continue;
      float du = flow.at(x, y, 0), dv = flow.at(x, y, 1);
      if (!std::isfinite(du) || !std::isfinite(dv)) du = dv = 0.f;
      out.set(x, y, {du, dv});
    }
  return out;
}

}  // namespace skyflow
