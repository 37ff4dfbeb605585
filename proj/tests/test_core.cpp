#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "skyflow/skyflow.hpp"

using namespace skyflow;
namespace fs = std::filesystem;

namespace {

SkyImage constant_image(int size, float r, float g, float b) {
  SkyImage img(size);
  DiscDomain disc(size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      if (!disc.valid(x, y)) continue;
      img.at(x, y, 0) = r;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = b;
    }
  return img;
}

SkyImage random_image(int size, uint64_t seed) {
  SkyImage img(size);
  Rng rng(seed);
  DiscDomain disc(size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      if (!disc.valid(x, y)) continue;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = float(rng.uniform());
    }
  return img;
}

std::string tmp_path(const std::string& name) {
  return (fs::path(SKYFLOW_TEST_TMP) / name).string();
}

}  // namespace

TEST_CASE("disc validity geometry") {
  auto flags = disc_validity(64);
  DiscDomain disc(64);
  CHECK(flags[size_t(32) * 64 + 32] == 1);  // center pixel
  CHECK(flags[0] == 0);                     // corner pixel
  // width=2: all four pixel centers are sqrt(0.5) from the center, inside r=1
  auto tiny = disc_validity(2);
  for (uint8_t f : tiny) CHECK(f == 1);
  // brute-force against explicit geometry
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      double dx = x + 0.5 - 32.0, dy = y + 0.5 - 32.0;
      bool expect = dx * dx + dy * dy <= 32.0 * 32.0;
      CHECK(bool(flags[size_t(y) * 64 + x]) == expect);
      CHECK(disc.valid(x, y) == expect);
    }
  CHECK_THROWS_AS(disc_validity(0), PreconditionError);
}

TEST_CASE("cloud mask thresholding") {
  SkyImage img = constant_image(32, 0.5f, 0.5f, 1.0f);
  CloudMask mask = compute_cloud_mask(img, 0.46f);
  DiscDomain disc(32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      CHECK(mask.at(x, y) == (disc.valid(x, y) ? 1 : 0));  // 0.5 > 0.46

  SkyImage low = constant_image(32, 0.2f, 0.2f, 1.0f);
  CHECK(compute_cloud_mask(low, 0.46f).count() == 0);

  // degenerate B = 0
  SkyImage zero = constant_image(32, 0.0f, 0.0f, 0.0f);
  CHECK(compute_cloud_mask(zero).count() == 0);
  SkyImage red = constant_image(32, 0.3f, 0.0f, 0.0f);
  CloudMask red_mask = compute_cloud_mask(red);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      CHECK(red_mask.at(x, y) == (disc.valid(x, y) ? 1 : 0));
}

TEST_CASE("cloud mask scale invariance and determinism") {
  SkyImage img = random_image(48, 7);
  CloudMask a = compute_cloud_mask(img);
  CloudMask b = compute_cloud_mask(img);
  CHECK(a.bits == b.bits);

  // uniform scaling of R and B by the same factor keeps the ratio
  SkyImage scaled = img;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) {
      scaled.at(x, y, 0) *= 0.5f;
      scaled.at(x, y, 2) *= 0.5f;
    }
  CHECK(compute_cloud_mask(scaled).bits == a.bits);
}

TEST_CASE("tone curve invariants") {
  for (ToneCurve curve : {ToneCurve::identity(), ToneCurve::gamma(2.2),
                          ToneCurve::exponential(3.0)}) {
    CHECK(curve.forward01(0.0) == doctest::Approx(0.0));
    double prev = -1.0;
    for (int i = 0; i <= 100; ++i) {
      double x = i / 100.0;
      double y = curve.forward01(x);
      CHECK(y > prev);  // strictly increasing on [0,1]
      prev = y;
      CHECK(curve.forward01(curve.inverse01(y)) == doctest::Approx(y).epsilon(1e-6));
    }
  }
}

TEST_CASE("normalize_hdr examples") {
  Raster raw(16, 16, 3);
  DiscDomain disc(16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) raw.at(x, y, c) = 0.25f;

  SkyImage ident = normalize_hdr(raw, ToneCurve::identity());
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      if (disc.valid(x, y)) CHECK(ident.at(x, y, 0) == doctest::Approx(0.25f));

  // gamma exponent 2: 0.25 -> 0.5
  SkyImage gam = normalize_hdr(raw, ToneCurve::gamma(2.0));
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      if (disc.valid(x, y))
        CHECK(gam.at(x, y, 0) == doctest::Approx(0.5f).epsilon(1e-6));

  // zero maps to zero under any curve
  Raster zeros(16, 16, 3);
  for (ToneCurve curve : {ToneCurve::gamma(2.2), ToneCurve::exponential(4.0)}) {
    SkyImage z = normalize_hdr(zeros, curve);
    for (float v : z.rgb.data) CHECK(v == 0.f);
  }

  // non-finite input rejected
  Raster bad = raw;
  bad.at(8, 8, 1) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(normalize_hdr(bad, ToneCurve::identity()), NumericError);
}

TEST_CASE("expand_ldr examples and round trip") {
  SkyImage img = constant_image(16, 0.5f, 0.5f, 0.5f);
  Raster hdr = expand_ldr(img, ToneCurve::identity(), 100.0);
  DiscDomain disc(16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      if (disc.valid(x, y))
        CHECK(hdr.at(x, y, 0) == doctest::Approx(50.f));  // 0.5 * 100

  SkyImage zero = constant_image(16, 0.f, 0.f, 0.f);
  Raster zhdr = expand_ldr(zero, ToneCurve::gamma(2.2, 40.0), 40.0);
  for (float v : zhdr.data) CHECK(v == 0.f);

  // expand(normalize(x)) = x within 1e-5 for every curve kind (peak in range)
  const double peak = 40.0;
  Rng rng(3);
  Raster synth(24, 24, 3);
  DiscDomain d24(24);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x)
      if (d24.valid(x, y))
        for (int c = 0; c < 3; ++c)
          synth.at(x, y, c) = float(rng.uniform() * peak);
  for (ToneCurve curve :
       {ToneCurve{ToneCurveKind::Identity, 2.2, peak},
        ToneCurve::gamma(2.2, peak), ToneCurve::exponential(3.0, peak)}) {
    SkyImage norm = normalize_hdr(synth, curve);
    Raster back = expand_ldr(norm, curve, peak);
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x)
        if (d24.valid(x, y))
          for (int c = 0; c < 3; ++c)
            CHECK(back.at(x, y, c) ==
                  doctest::Approx(synth.at(x, y, c)).epsilon(1e-5));
  }

  // validity conservation: nothing written outside the disc
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      if (!disc.valid(x, y))
        for (int c = 0; c < 3; ++c) CHECK(hdr.at(x, y, c) == 0.f);
}

TEST_CASE("fisheye projection round trips") {
  FisheyeProjection proj(512);

  // zenith -> center
  PixelCoord center = project({0, 0, 1}, proj);
  CHECK(center.u == doctest::Approx(256.0));
  CHECK(center.v == doctest::Approx(256.0));

  // horizon +x -> disc boundary along +u
  PixelCoord hx = project({1, 0, 0}, proj);
  CHECK(hx.u == doctest::Approx(512.0));
  CHECK(hx.v == doctest::Approx(256.0));

  // theta = pi/4 along +u lands a quarter resolution from the center
  double s = std::sqrt(0.5);
  PixelCoord q = project({s, 0, s}, proj);
  CHECK(q.u - 256.0 == doctest::Approx(128.0).epsilon(1e-9));

  CHECK(unproject({256.0, 256.0}, proj).z == doctest::Approx(1.0));
  Direction hor = unproject({512.0, 256.0}, proj);
  CHECK(hor.x == doctest::Approx(1.0));
  CHECK(std::abs(hor.z) < 1e-12);

  CHECK_THROWS_AS(project({0, 0, -0.5}, proj), PreconditionError);
  CHECK_THROWS_AS(unproject({600.0, 256.0}, proj), PreconditionError);

  // round trip sweep over random in-disc points
  Rng rng(11);
  for (int i = 0; i < 10000; ++i) {
    double ang = rng.uniform() * 2 * kPi;
    double r = std::sqrt(rng.uniform()) * 255.9;
    PixelCoord p{256.0 + r * std::cos(ang), 256.0 + r * std::sin(ang)};
    PixelCoord p2 = project(unproject(p, proj), proj);
    CHECK(std::hypot(p2.u - p.u, p2.v - p.v) < 1e-4);
  }
}

TEST_CASE("projection azimuthal equivariance") {
  FisheyeProjection proj(256);
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    double theta = rng.uniform() * kPi / 2;
    double phi = rng.uniform() * 2 * kPi;
    double rot = rng.uniform() * 2 * kPi;
    Direction d{std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
                std::cos(theta)};
    Direction dr{std::sin(theta) * std::cos(phi + rot),
                 std::sin(theta) * std::sin(phi + rot), std::cos(theta)};
    PixelCoord p = project(d, proj);
    PixelCoord pr = project(dr, proj);
    double cu = p.u - 128.0, cv = p.v - 128.0;
    double eu = cu * std::cos(rot) - cv * std::sin(rot);
    double ev = cu * std::sin(rot) + cv * std::cos(rot);
    CHECK(pr.u - 128.0 == doctest::Approx(eu).epsilon(1e-9).scale(1.0));
    CHECK(pr.v - 128.0 == doctest::Approx(ev).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("great arc interpolation") {
  Direction d0{0, 0, 1}, d1{1, 0, 0};
  Direction mid = great_arc_interp(d0, d1, 0.5);
  CHECK(mid.x == doctest::Approx(std::sqrt(0.5)));
  CHECK(mid.z == doctest::Approx(std::sqrt(0.5)));

  CHECK(great_arc_interp(d0, d1, 0.0).z == doctest::Approx(1.0));
  CHECK(great_arc_interp(d0, d1, 1.0).x == doctest::Approx(1.0));

  CHECK_THROWS_AS(great_arc_interp({0, 0, 1}, {0, 0, -1}, 0.5), PreconditionError);

  // angle additivity over random hemisphere pairs
  Rng rng(17);
  for (int i = 0; i < 10000; ++i) {
    auto rand_dir = [&]() {
      double theta = rng.uniform() * kPi / 2;
      double phi = rng.uniform() * 2 * kPi;
      return Direction{std::sin(theta) * std::cos(phi),
                       std::sin(theta) * std::sin(phi), std::cos(theta)};
    };
    Direction a = rand_dir(), b = rand_dir();
    double s = rng.uniform();
    Direction r = great_arc_interp(a, b, s);
    CHECK(std::abs(r.norm() - 1.0) < 1e-12);
    CHECK(std::abs(a.angle_to(r) + r.angle_to(b) - a.angle_to(b)) < 1e-9);
    CHECK(std::abs(a.angle_to(r) - s * a.angle_to(b)) < 1e-9);
  }
}

TEST_CASE("displace_on_sphere") {
  FisheyeProjection proj(256);
  PixelCoord p{100.0, 80.0};

  // zero vector: identity for all s
  for (double s : {0.0, 0.3, 1.0}) {
    DisplaceResult r = displace_on_sphere(p, {0, 0}, s, proj);
    CHECK(r.p.u == p.u);
    CHECK(r.p.v == p.v);
    CHECK(!r.clamped);
  }

  // s = 1 returns p + v
  Vec2f v{7.f, -4.f};
  DisplaceResult r1 = displace_on_sphere(p, v, 1.0, proj);
  CHECK(std::hypot(r1.p.u - (p.u + v.x), r1.p.v - (p.v + v.y)) < 1e-3);

  // radial arc from the center: equidistant projection is linear in radius
  PixelCoord c{128.0, 128.0};
  DisplaceResult rhalf = displace_on_sphere(c, {10.f, 0.f}, 0.5, proj);
  CHECK(rhalf.p.u - 128.0 == doctest::Approx(5.0).epsilon(1e-6));
  CHECK(rhalf.p.v == doctest::Approx(128.0));

  // out-of-disc target clamps to the boundary and flags
  DisplaceResult rc = displace_on_sphere({250.0, 128.0}, {20.f, 0.f}, 1.0, proj);
  CHECK(rc.clamped);
  CHECK(std::hypot(rc.p.u - 128.0, rc.p.v - 128.0) <= 128.0 + 1e-6);

  // continuity in s
  PixelCoord prev = displace_on_sphere(p, v, 0.0, proj).p;
  for (int i = 1; i <= 20; ++i) {
    double s = i / 20.0;
    PixelCoord cur = displace_on_sphere(p, v, s, proj).p;
    double step = std::hypot(cur.u - prev.u, cur.v - prev.v);
    CHECK(step <= v.norm() * (1.0 / 20.0) * 2.0);
    prev = cur;
  }
}

TEST_CASE("flow encoding") {
  FlowField f(8, 8);
  f.set(4, 4, {0.f, 0.f});
  f.set(4, 3, {3.f, 0.f});
  f.set(3, 4, {0.f, -2.f});
  EncodedFlow e = encode_flow(f);
  CHECK(e.ch.at(4, 4, 0) == 0.f);
  CHECK(e.ch.at(4, 4, 1) == 1.f);
  CHECK(e.ch.at(4, 4, 2) == 0.f);
  CHECK(e.ch.at(4, 3, 0) == doctest::Approx(0.f));
  CHECK(e.ch.at(4, 3, 1) == doctest::Approx(1.f));
  CHECK(e.ch.at(4, 3, 2) == doctest::Approx(3.f));
  CHECK(e.ch.at(3, 4, 0) == doctest::Approx(-1.f));
  CHECK(e.ch.at(3, 4, 1) == doctest::Approx(0.f).epsilon(1e-6).scale(1.0));
  CHECK(e.ch.at(3, 4, 2) == doctest::Approx(2.f));

  FlowField back = decode_flow(e);
  CHECK(back.at(4, 3).x == doctest::Approx(3.f));
  CHECK(back.at(3, 4).y == doctest::Approx(-2.f));

  // round trip property, magnitudes up to 50 px
  Rng rng(23);
  FlowField rf(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      double ang = rng.uniform() * 2 * kPi;
      double mag = rng.uniform() * 50.0;
      rf.set(x, y, {float(mag * std::cos(ang)), float(mag * std::sin(ang))});
    }
  FlowField rt = decode_flow(encode_flow(rf));
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      CHECK(std::abs(rt.at(x, y).x - rf.at(x, y).x) < 1e-5 * 50);
      CHECK(std::abs(rt.at(x, y).y - rf.at(x, y).y) < 1e-5 * 50);
    }

  // encoded angle channels are unit-normalized wherever magnitude > eps
  EncodedFlow re = encode_flow(rf);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      float s = re.ch.at(x, y, 0), c = re.ch.at(x, y, 1);
      if (re.ch.at(x, y, 2) > kZeroFlowEps)
        CHECK(std::abs(s * s + c * c - 1.f) < 1e-4);
    }
}

TEST_CASE("mask_flow") {
  FlowField f(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) f.set(x, y, {1.f, 1.f});

  CloudMask ones(16, 16), zeros(16, 16), checker(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      ones.at(x, y) = 1;
      checker.at(x, y) = uint8_t((x + y) % 2);
    }

  FlowField kept = mask_flow(f, ones);
  CHECK(kept.uv.data == f.uv.data);
  FlowField none = mask_flow(f, zeros);
  for (float v : none.uv.data) CHECK(v == 0.f);
  FlowField check = mask_flow(f, checker);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      Vec2f v = check.at(x, y);
      if (checker.at(x, y)) {
        CHECK(v.x == 1.f);
        CHECK(v.y == 1.f);
      } else {
        CHECK(v.x == 0.f);
        CHECK(v.y == 0.f);
      }
    }

  CloudMask small(8, 8);
  CHECK_THROWS_AS(mask_flow(f, small), PreconditionError);
}

TEST_CASE("flow magnitude histogram") {
  const int n = 32;
  FlowField f(n, n);
  CloudMask mask(n, n);
  DiscDomain disc(n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      if (disc.valid(x, y)) {
        mask.at(x, y) = 1;
        f.set(x, y, {2.f, 0.f});
      }

  auto hist = flow_magnitude_histogram(f, mask, {0.0, 1.0, 2.5, 5.0});
  CHECK(hist[0] == 0.0);
  CHECK(hist[1] == 1.0);
  CHECK(hist[2] == 0.0);

  FlowField zero(n, n);
  auto zh = flow_magnitude_histogram(zero, mask, {0.0, 1.0, 2.5, 5.0});
  CHECK(zh[0] == 1.0);

  // mixed magnitudes against a brute-force count
  Rng rng(9);
  FlowField mixed(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      if (disc.valid(x, y))
        mixed.set(x, y, {float(rng.uniform() * 6.0), 0.f});
  std::vector<double> edges{0.0, 0.5, 1.5, 3.0, 6.5};
  auto mh = flow_magnitude_histogram(mixed, mask, edges);
  std::vector<double> brute(edges.size() - 1, 0.0);
  size_t total = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      if (!mask.at(x, y)) continue;
      double m = mixed.at(x, y).norm();
      for (size_t b = 0; b + 1 < edges.size(); ++b)
        if ((m >= edges[b] && m < edges[b + 1]) ||
            (b + 2 == edges.size() && m >= edges[b + 1])) {
          brute[b] += 1;
          break;
        }
      ++total;
    }
  double sum = 0.0;
  for (size_t b = 0; b < brute.size(); ++b) {
    CHECK(mh[b] == doctest::Approx(brute[b] / double(total)).epsilon(1e-12));
    sum += mh[b];
  }
  CHECK(std::abs(sum - 1.0) < 1e-9);

  CloudMask empty(n, n);
  CHECK_THROWS_AS(flow_magnitude_histogram(f, empty, edges), PreconditionError);
  // sub-pixel bins are mandatory: the first edge must lie below 1 px
  CHECK_THROWS_AS(flow_magnitude_histogram(f, mask, {1.0, 2.0, 4.0}),
                  PreconditionError);
  CHECK_THROWS_AS(flow_magnitude_histogram(f, mask, {0.0, 0.0, 4.0}),
                  PreconditionError);
}

TEST_CASE("flow file round trips") {
  Rng rng(31);
  FlowField f(20, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x)
      f.set(x, y, {float(rng.normal()), float(rng.normal())});
  std::string path = tmp_path("roundtrip.skfl");
  write_flow(path, f);
  FlowField back = read_flow(path);
  CHECK(back.uv.data == f.uv.data);

  EncodedFlow e = encode_flow(f);
  std::string epath = tmp_path("roundtrip.skf3");
  write_encoded_flow(epath, e);
  EncodedFlow eback = read_encoded_flow(epath);
  CHECK(eback.ch.data == e.ch.data);

  CHECK_THROWS_AS(read_flow(epath), ConfigError);  // wrong magic
}

TEST_CASE("png round trip") {
  SkyImage img = random_image(32, 77);
  std::string path = tmp_path("roundtrip.png");
  write_png(path, img.rgb);
  Raster back = read_png(path, /*linearize=*/true);
  REQUIRE(back.width == 32);
  REQUIRE(back.channels == 3);
  // 8-bit quantization in sRGB: generous absolute tolerance in linear space
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(std::abs(back.at(x, y, c) - img.at(x, y, c)) < 0.01f);

  // byte-exactness of re-encoding: decode -> encode reproduces the file
  std::string path2 = tmp_path("roundtrip2.png");
  write_png(path2, back);
  Raster again = read_png(path2, true);
  CHECK(again.data == back.data);
}

TEST_CASE("mask png is 0/255 single channel") {
  SkyImage img = constant_image(16, 0.8f, 0.8f, 0.9f);
  CloudMask mask = compute_cloud_mask(img);
  std::string path = tmp_path("mask.png");
  write_mask_png(path, mask);
  Raster back = read_png(path, false);
  REQUIRE(back.channels == 1);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      CHECK(back.at(x, y, 0) == (mask.at(x, y) ? 1.f : 0.f));
}

TEST_CASE("pfm format and round trip") {
  Raster hdr(8, 8, 3);
  Rng rng(41);
  for (float& v : hdr.data) v = float(rng.uniform() * 120.0);
  std::string path = tmp_path("test.pfm");
  write_pfm(path, hdr);

  // header bytes per the PFM convention
  std::ifstream f(path, std::ios::binary);
  std::string magic, dims1, dims2, scale;
  f >> magic >> dims1 >> dims2 >> scale;
  CHECK(magic == "PF");
  CHECK(dims1 == "8");
  CHECK(dims2 == "8");
  CHECK(scale == "-1.0");  // little-endian marker

  Raster back = read_pfm(path);
  CHECK(back.data == hdr.data);
}

TEST_CASE("srgb transfer round trip") {
  for (int i = 0; i <= 255; ++i) {
    float s = i / 255.f;
    float l = srgb_to_linear(s);
    CHECK(std::lround(linear_to_srgb(l) * 255.f) == i);
  }
}
