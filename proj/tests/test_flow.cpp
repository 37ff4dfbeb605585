#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "skyflow/skyflow.hpp"

using namespace skyflow;

namespace {

// dense single-layer scene over a uniform backdrop: every visible pixel
// translates with the layer, so the true flow is the layer velocity
SyntheticSceneSpec flow_scene(int res, Vec2f velocity, uint64_t seed = 1) {
  SyntheticSceneSpec spec;
  spec.resolution = res;
  SyntheticLayer layer;
  layer.velocity = velocity;
  layer.octaves = 5;
  layer.base_frequency = 12;  // fine enough texture for sharp flow recovery
  layer.coverage = 0.0;       // texture everywhere
  spec.layers = {layer};
  for (int c = 0; c < 3; ++c) spec.sky_zenith[c] = spec.sky_horizon[c];
  spec.seed = seed;
  return spec;
}

double mean_epe_interior(const FlowField& flow, Vec2f truth) {
  DiscDomain disc(flow.width());
  double r80 = disc.radius() * 0.8;
  double acc = 0.0;
  size_t n = 0;
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) {
      double dx = x + 0.5 - disc.cx(), dy = y + 0.5 - disc.cy();
      if (dx * dx + dy * dy > r80 * r80) continue;
      Vec2f v = flow.at(x, y);
      acc += std::hypot(v.x - truth.x, v.y - truth.y);
      ++n;
    }
  return acc / double(n);
}

double mean_abs_flow(const FlowField& flow) {
  double acc = 0.0;
  size_t n = 0;
  DiscDomain disc(flow.width());
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) {
      if (!disc.valid(x, y)) continue;
      acc += flow.at(x, y).norm();
      ++n;
    }
  return acc / double(n);
}

}  // namespace

TEST_CASE("synthetic generator determinism and statics") {
  SyntheticSceneSpec spec = flow_scene(96, {0.f, 0.f}, 3);
  SyntheticSequence a = generate_synthetic_sequence(spec, 3);
  SyntheticSequence b = generate_synthetic_sequence(spec, 3);
  REQUIRE(a.capture.frames.size() == 3);
  REQUIRE(a.gt_flow.size() == 2);
  // fixed seed: bit identical across runs
  for (int k = 0; k < 3; ++k)
    CHECK(a.capture.frames[k].rgb.data == b.capture.frames[k].rgb.data);
  // zero velocity: identical frames
  CHECK(a.capture.frames[0].rgb.data == a.capture.frames[1].rgb.data);
  CHECK(a.capture.frames[1].rgb.data == a.capture.frames[2].rgb.data);
  for (const auto& img : a.capture.frames) CHECK(img.obeys_invariants());
}

TEST_CASE("synthetic generator translates exactly") {
  const int res = 96;
  SyntheticSceneSpec spec = flow_scene(res, {3.f, 0.f}, 5);
  SyntheticSequence seq = generate_synthetic_sequence(spec, 4);
  DiscDomain disc(res);
  for (int k = 1; k < 4; ++k) {
    double err = 0.0;
    size_t n = 0;
    int shift = 3 * k;
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        if (!disc.valid(x, y) || x - shift < 0 || !disc.valid(x - shift, y))
          continue;
        for (int c = 0; c < 3; ++c) {
          double d = seq.capture.frames[k].at(x, y, c) -
                     seq.capture.frames[0].at(x - shift, y, c);
          err += d * d;
        }
        ++n;
      }
    CHECK(err / (double(n) * 3.0) < 1e-4);
  }
}

TEST_CASE("synthetic scene spec json round trip") {
  SyntheticSceneSpec spec = flow_scene(128, {2.f, -1.f}, 9);
  spec.layers.push_back({{-0.5f, 0.75f}, 3, 5, 0.55});
  nlohmann::json j = spec;
  SyntheticSceneSpec back = j.get<SyntheticSceneSpec>();
  CHECK(back.resolution == spec.resolution);
  REQUIRE(back.layers.size() == 2);
  CHECK(back.layers[1].velocity.y == spec.layers[1].velocity.y);
  CHECK(back.seed == spec.seed);
}

TEST_CASE("farneback zero motion") {
  SyntheticSceneSpec spec = flow_scene(128, {0.f, 0.f}, 7);
  SyntheticSequence seq = generate_synthetic_sequence(spec, 2);
  FlowField flow =
      farneback_flow(seq.capture.frames[0], seq.capture.frames[1], {});
  CHECK(mean_abs_flow(flow) < 0.05);
  // invalid pixels carry zero vectors
  DiscDomain disc(128);
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x)
      if (!disc.valid(x, y)) {
        CHECK(flow.at(x, y).x == 0.f);
        CHECK(flow.at(x, y).y == 0.f);
      }
}

TEST_CASE("farneback integer shift") {
  SyntheticSceneSpec spec = flow_scene(192, {3.f, 0.f}, 11);
  SyntheticSequence seq = generate_synthetic_sequence(spec, 2);
  FlowField flow =
      farneback_flow(seq.capture.frames[0], seq.capture.frames[1], {});
  double epe = mean_epe_interior(flow, {3.f, 0.f});
  INFO("mean EPE " << epe);
  CHECK(epe < 0.25);
}

TEST_CASE("farneback subpixel shift") {
  SyntheticSceneSpec spec = flow_scene(192, {-2.f, 1.5f}, 13);
  SyntheticSequence seq = generate_synthetic_sequence(spec, 2);
  FlowField flow =
      farneback_flow(seq.capture.frames[0], seq.capture.frames[1], {});
  double epe = mean_epe_interior(flow, {-2.f, 1.5f});
  INFO("mean EPE " << epe);
  CHECK(epe < 0.3);
}

TEST_CASE("farneback dimension mismatch") {
  SkyImage a(64), b(32);
  CHECK_THROWS_AS(farneback_flow(a, b, {}), PreconditionError);
}

TEST_CASE("farneback params validation") {
  FarnebackParams p;
  p.window = 14;  // even
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.pyramid_scale = 1.5;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}
