#pragma once

#include <cmath>
#include <cstdint>

#include "skyflow/common.hpp"

namespace skyflow {

// Tileable value noise on a hashed integer lattice. The lattice wraps modulo
// the cell count, so translated samples are exact: noise(x + P) == noise(x)
// with period P = cells in lattice units. That exactness is what makes the
// synthetic sequences usable as shift oracles.

namespace noise {

inline double hash01(int64_t ix, int64_t iy, uint64_t salt) {
  uint64_t h = splitmix64(uint64_t(ix) * 0x9e3779b97f4a7c15ULL ^
                          uint64_t(iy) * 0xc2b2ae3d27d4eb4fULL ^ salt);
  return double(h >> 11) * 0x1.0p-53;
}

inline int64_t wrap(int64_t i, int64_t n) {
  int64_t r = i % n;
  return r < 0 ? r + n : r;
}

// x, y in lattice units; period `cells` per axis
inline double value_noise(double x, double y, int cells, uint64_t salt) {
  double fx = std::floor(x), fy = std::floor(y);
  int64_t ix = int64_t(fx), iy = int64_t(fy);
  double wx = x - fx, wy = y - fy;
  // quintic fade
  double ux = wx * wx * wx * (wx * (wx * 6 - 15) + 10);
  double uy = wy * wy * wy * (wy * (wy * 6 - 15) + 10);
  auto lat = [&](int64_t i, int64_t j) {
    return hash01(wrap(ix + i, cells), wrap(iy + j, cells), salt);
  };
  double a = lat(0, 0), b = lat(1, 0), c = lat(0, 1), d = lat(1, 1);
  return a + (b - a) * ux + (c - a) * uy + (a - b - c + d) * ux * uy;
}

// Fractal sum in [0,1]. Coordinates in image fractions, i.e. u,v in [0,1)
// cover the frame once; base_cells lattice cells per axis at octave 0.
inline double fbm01(double u, double v, int octaves, int base_cells,
                    uint64_t salt) {
  double sum = 0.0, amp = 0.5, norm = 0.0;
  int cells = base_cells;
  for (int o = 0; o < octaves; ++o) {
    sum += amp * value_noise(u * cells, v * cells, cells,
                             splitmix64(salt + 0x51ed2701u + uint64_t(o)));
    norm += amp;
    amp *= 0.5;
    cells *= 2;
  }
  return sum / norm;
}

}  // namespace noise
}  // namespace skyflow
