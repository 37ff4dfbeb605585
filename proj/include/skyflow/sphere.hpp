#pragma once

#include <cmath>

#include "skyflow/common.hpp"
#include "skyflow/raster.hpp"

namespace skyflow {

// Unit direction on the sky hemisphere, z = up/zenith.
struct Direction {
  double x = 0.0, y = 0.0, z = 1.0;

  double dot(const Direction& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }

  Direction normalized() const {
    double n = norm();
    return {x / n, y / n, z / n};
  }

  // angle to another unit direction, robust near 0 and pi
  double angle_to(const Direction& o) const {
    double cx = y * o.z - z * o.y;
    double cy = z * o.x - x * o.z;
    double cz = x * o.y - y * o.x;
    double s = std::sqrt(cx * cx + cy * cy + cz * cz);
    return std::atan2(s, dot(o));
  }
};

struct PixelCoord {
  double u = 0.0;  // rightward, origin at top-left corner
  double v = 0.0;  // downward; pixel centers at half-integers
};

// Equidistant (equiangular) fisheye mapping M between the hemisphere and the
// inscribed disc: radial pixel distance is proportional to zenith angle, the
// zenith maps to the image center and the horizon to the disc boundary.
struct FisheyeProjection {
  int resolution = 0;

  explicit FisheyeProjection(int res = 0) : resolution(res) {}

  double center() const { return resolution * 0.5; }
  double disc_radius() const { return resolution * 0.5; }
};

inline PixelCoord project(const Direction& dir, const FisheyeProjection& proj) {
  if (dir.z < -1e-12)
    throw PreconditionError("project: direction below the hemisphere");
  double z = std::min(1.0, std::max(-1.0, dir.z));
  double theta = std::acos(z);  // zenith angle
  double r = theta / (kPi / 2.0) * proj.disc_radius();
  double planar = std::sqrt(dir.x * dir.x + dir.y * dir.y);
  if (planar < 1e-300) return {proj.center(), proj.center()};
  double cu = dir.x / planar;
  double cv = dir.y / planar;
  return {proj.center() + r * cu, proj.center() + r * cv};
}

inline Direction unproject(const PixelCoord& p, const FisheyeProjection& proj) {
  double du = p.u - proj.center();
  double dv = p.v - proj.center();
  double r = std::sqrt(du * du + dv * dv);
  if (r > proj.disc_radius() * (1.0 + 1e-9))
    throw PreconditionError("unproject: pixel outside the valid disc");
  double theta = r / proj.disc_radius() * (kPi / 2.0);
  if (r < 1e-300) return {0.0, 0.0, 1.0};
  double s = std::sin(theta);
  return {s * du / r, s * dv / r, std::cos(theta)};
}

// Spherical linear interpolation along the great circle through d0 and d1:
// angle(d0, result) = s * angle(d0, d1).
inline Direction great_arc_interp(const Direction& d0, const Direction& d1,
                                  double s) {
  double omega = d0.angle_to(d1);
  if (omega > kPi - 1e-9)
    throw PreconditionError("great_arc_interp: antipodal endpoints, arc is ambiguous");
  if (omega < 1e-12) {
    // endpoints (numerically) coincide
    Direction r{d0.x + (d1.x - d0.x) * s, d0.y + (d1.y - d0.y) * s,
                d0.z + (d1.z - d0.z) * s};
    return r.normalized();
  }
  double so = std::sin(omega);
  double w0 = std::sin((1.0 - s) * omega) / so;
  double w1 = std::sin(s * omega) / so;
  Direction r{w0 * d0.x + w1 * d1.x, w0 * d0.y + w1 * d1.y,
              w0 * d0.z + w1 * d1.z};
  return r.normalized();
}

struct DisplaceResult {
  PixelCoord p;
  bool clamped = false;  // advection target fell outside the disc
};

// Lift an image-space displacement to the sphere: walk the fraction s of the
// great arc from M^-1(p) to M^-1(p + v) and map back. Targets outside the
// disc are clamped to the boundary and flagged so callers can tell clouds
// exiting the hemisphere from regular motion.
inline DisplaceResult displace_on_sphere(const PixelCoord& p, Vec2f v, double s,
                                         const FisheyeProjection& proj) {
  if (v.x == 0.f && v.y == 0.f) return {p, false};
  double tu = p.u + v.x;
  double tv = p.v + v.y;
  bool clamped = false;
  double du = tu - proj.center();
  double dv = tv - proj.center();
  double r = std::sqrt(du * du + dv * dv);
  if (r > proj.disc_radius()) {
    double f = proj.disc_radius() / r;
    tu = proj.center() + du * f;
    tv = proj.center() + dv * f;
    clamped = true;
  }
  Direction d0 = unproject(p, proj);
  Direction d1 = unproject({tu, tv}, proj);
  Direction dr = great_arc_interp(d0, d1, s);
  return {project(dr, proj), clamped};
}

}  // namespace skyflow
