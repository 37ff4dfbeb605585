#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "skyflow/farneback.hpp"
#include "skyflow/flow_field.hpp"
#include "skyflow/sky_image.hpp"
#include "skyflow/sphere.hpp"
#include "skyflow/unet.hpp"

namespace skyflow {

// Two consecutive medium-timescale predictions plus the (re-estimated) flow
// between them: everything the short-timescale model needs for one interval.
struct KeyframePair {
  SkyImage frame_a;  // at time i * delta_t
  SkyImage frame_b;  // at time (i+1) * delta_t
  FlowField flow;    // a -> b, masked to frame_a's clouds
  int index = 0;

  void validate() const {
    if (frame_a.size() != frame_b.size() || flow.width() != frame_a.size() ||
        flow.height() != frame_a.size())
      throw PreconditionError("KeyframePair: resolution mismatch");
  }
};

struct SequenceConfig {
  double delta_t = 10.0;   // seconds between keyframes
  int keyframe_count = 1;  // medium-timescale predictions to run
  int substeps = 30;       // frames per delta_t; divisible by 3 so the
                           // advection anchors land on substep boundaries
  FisheyeProjection projection;
  ToneCurve tone;
  double peak = 1.0;

  void validate() const {
    if (delta_t <= 0) throw ConfigError("sequence: delta_t must be > 0");
    if (keyframe_count < 1) throw ConfigError("sequence: keyframe count must be >= 1");
    if (substeps < 3 || substeps % 3 != 0)
      throw ConfigError("sequence: substeps must be >= 3 and divisible by 3");
    if (peak <= 0) throw ConfigError("sequence: peak must be > 0");
  }

  int total_frames() const { return keyframe_count * substeps + 1; }
};

// One application of the medium-timescale recursion: the next keyframe is
// CloudNet applied to the frame and FlowNet's flow prediction for it. The
// flow encoding is returned alongside for diagnostics.
inline std::pair<SkyImage, EncodedFlow> xi_step(UNetModel& flownet,
                                                UNetModel& cloudnet,
                                                const SkyImage& img) {
  EncodedFlow flow = flownet_infer(flownet, img);
  SkyImage next = cloudnet_infer(cloudnet, img, flow);
  return {std::move(next), std::move(flow)};
}

// Advection (the short-timescale warp): transport pixel content the fraction
// s along the flow, with displacements lifted to great arcs on the sphere.
// Implemented as a backward warp: each destination pixel samples the source
// at its inverse-arc preimage with bilinear filtering. Invalid pixels stay
// zero; s = 0 or an all-zero flow return the image unchanged.
inline SkyImage advect(const SkyImage& img, const FlowField& flow, double s,
                       const FisheyeProjection& proj) {
  if (flow.width() != img.size() || flow.height() != img.size())
    throw PreconditionError("advect: dimension mismatch");
  SkyImage out(img.size());
  DiscDomain disc = img.disc();
  const int n = img.size();
#pragma omp parallel for schedule(static)
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      if (!disc.valid(x, y)) continue;
      Vec2f v = flow.at(x, y);
      if ((v.x == 0.f && v.y == 0.f) || s == 0.0) {
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x, y, c);
        continue;
      }
      PixelCoord p{x + 0.5, y + 0.5};
      DisplaceResult src = displace_on_sphere(p, -v, s, proj);
      for (int c = 0; c < 3; ++c)
        out.at(x, y, c) = std::clamp(
            sample_bilinear(img.rgb, src.p.u, src.p.v, c), 0.f, 1.f);
    }
  return out;
}

// Per-pixel linear blend (1-w) a + w b, computed as a + w (b - a) so that
// identical inputs are an exact fixed point; the endpoints return the inputs
// bit-for-bit.
inline SkyImage interpolate(const SkyImage& a, const SkyImage& b, double w) {
  if (a.size() != b.size())
    throw PreconditionError("interpolate: dimension mismatch");
  if (w == 0.0) return a;
  if (w == 1.0) return b;
  SkyImage out(a.size());
  const float wf = float(w);
  for (size_t i = 0; i < out.rgb.data.size(); ++i)
    out.rgb.data[i] = a.rgb.data[i] + wf * (b.rgb.data[i] - a.rgb.data[i]);
  return out;
}

namespace detail {

struct GammaAnchors {
  SkyImage third;      // advect(A, flow, 1/3)
  SkyImage two_third;  // advect(B, -flow, 1/3)
};

inline GammaAnchors gamma_anchors(const KeyframePair& pair,
                                  const FisheyeProjection& proj) {
  GammaAnchors a;
  a.third = advect(pair.frame_a, pair.flow, 1.0 / 3.0, proj);
  FlowField neg(pair.flow.width(), pair.flow.height());
  for (size_t i = 0; i < neg.uv.data.size(); ++i)
    neg.uv.data[i] = -pair.flow.uv.data[i];
  a.two_third = advect(pair.frame_b, neg, 1.0 / 3.0, proj);
  return a;
}

inline SkyImage gamma_eval(const KeyframePair& pair, const GammaAnchors& anchors,
                           double t_prime, double delta_t) {
  const double third = delta_t / 3.0;
  if (t_prime == third) return anchors.third;
  if (t_prime == 2.0 * third) return anchors.two_third;
  if (t_prime < third)
    return interpolate(pair.frame_a, anchors.third, t_prime / third);
  if (t_prime < 2.0 * third)
    return interpolate(anchors.third, anchors.two_third,
                       (t_prime - third) / third);
  return interpolate(anchors.two_third, pair.frame_b,
                     (t_prime - 2.0 * third) / third);
}

}  // namespace detail

// The short-timescale piecewise linear model: two advection anchors at
// delta_t/3 and 2 delta_t/3 (frame A carried forward, frame B carried
// backward along the negated flow), linear interpolation between the
// bracketing anchors everywhere else.
inline SkyImage gamma(const KeyframePair& pair, double t_prime, double delta_t,
                      const FisheyeProjection& proj) {
  pair.validate();
  if (!(t_prime > 0.0 && t_prime < delta_t))
    throw PreconditionError("gamma: t' must lie strictly inside (0, delta_t)");
  detail::GammaAnchors anchors = detail::gamma_anchors(pair, proj);
  return detail::gamma_eval(pair, anchors, t_prime, delta_t);
}

// Spread masked flow into zero-flow pockets inside the cloud mask by
// iterative neighbor averaging, so homogeneous cloud interiors advect with
// their boundaries. Pixels outside the mask stay zero.
inline FlowField dilate_flow(const FlowField& flow, const CloudMask& mask,
                             int iterations = 50) {
  if (flow.width() != mask.width || flow.height() != mask.height)
    throw PreconditionError("dilate_flow: dimension mismatch");
  const int w = flow.width(), h = flow.height();
  FlowField cur = flow;
  std::vector<uint8_t> live(size_t(w) * h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      live[size_t(y) * w + x] = cur.at(x, y).norm() > kZeroFlowEps ? 1 : 0;

  for (int it = 0; it < iterations; ++it) {
    FlowField next = cur;
    std::vector<uint8_t> next_live = live;
    bool changed = false;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!mask.at(x, y) || live[size_t(y) * w + x]) continue;
        float sx = 0.f, sy = 0.f;
        int cnt = 0;
        const int nx[4] = {x - 1, x + 1, x, x};
        const int ny[4] = {y, y, y - 1, y + 1};
        for (int k = 0; k < 4; ++k) {
          if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
          if (!live[size_t(ny[k]) * w + nx[k]]) continue;
          Vec2f v = cur.at(nx[k], ny[k]);
          sx += v.x;
          sy += v.y;
          ++cnt;
        }
        if (cnt > 0) {
          next.set(x, y, {sx / cnt, sy / cnt});
          next_live[size_t(y) * w + x] = 1;
          changed = true;
        }
      }
    cur = std::move(next);
    live = std::move(next_live);
    if (!changed) break;
  }
  return cur;
}

enum class FrameKind { Keyframe, Anchor, Blend };

inline const char* frame_kind_name(FrameKind k) {
  switch (k) {
    case FrameKind::Keyframe: return "keyframe";
    case FrameKind::Anchor: return "anchor";
    case FrameKind::Blend: return "blend";
  }
  return "blend";
}

struct SequenceFrame {
  SkyImage image;
  double time = 0.0;  // seconds
  int index = 0;
  FrameKind kind = FrameKind::Keyframe;
};

// The timescale dispatcher: keyframes come from the recursive neural model,
// everything in between from the piecewise linear model. The flow driving
// each interval is re-estimated between the predicted keyframes, masked to
// frame A's clouds and dilated into cloud interiors.
inline std::vector<SequenceFrame> synthesize_sequence(
    const SkyImage& input, UNetModel& flownet, UNetModel& cloudnet,
    const SequenceConfig& cfg,
    const FarnebackParams& flow_params = {},
    float cloud_threshold = kDefaultCloudThreshold) {
  cfg.validate();
  if (input.size() != flownet.config.resolution ||
      input.size() != cloudnet.config.resolution)
    throw PreconditionError("synthesize_sequence: input resolution does not match models");

  std::vector<SequenceFrame> frames;
  frames.reserve(size_t(cfg.total_frames()));
  frames.push_back({input, 0.0, 0, FrameKind::Keyframe});

  SkyImage current = input;
  for (int i = 0; i < cfg.keyframe_count; ++i) {
    SkyImage next;
    try {
      next = xi_step(flownet, cloudnet, current).first;
    } catch (const Error& e) {
      throw PreconditionError("synthesize_sequence: keyframe " +
                              std::to_string(i + 1) + ": " + e.what());
    }

    KeyframePair pair;
    pair.frame_a = current;
    pair.frame_b = next;
    pair.index = i;
    FlowField raw = farneback_flow(current, next, flow_params);
    CloudMask mask = compute_cloud_mask(current, cloud_threshold);
    pair.flow = dilate_flow(mask_flow(raw, mask), mask);

    detail::GammaAnchors anchors = detail::gamma_anchors(pair, cfg.projection);
    for (int j = 1; j < cfg.substeps; ++j) {
      double t_prime = cfg.delta_t * double(j) / double(cfg.substeps);
      // anchors are selected by substep index, immune to rounding in t'
      SkyImage frame;
      FrameKind kind;
      if (j * 3 == cfg.substeps) {
        frame = anchors.third;
        kind = FrameKind::Anchor;
      } else if (j * 3 == 2 * cfg.substeps) {
        frame = anchors.two_third;
        kind = FrameKind::Anchor;
      } else {
        frame = detail::gamma_eval(pair, anchors, t_prime, cfg.delta_t);
        kind = FrameKind::Blend;
      }
      int index = i * cfg.substeps + j;
      frames.push_back({std::move(frame), i * cfg.delta_t + t_prime, index, kind});
    }

    int index = (i + 1) * cfg.substeps;
    frames.push_back({next, (i + 1) * cfg.delta_t, index, FrameKind::Keyframe});
    current = std::move(next);
  }
  return frames;
}

}  // namespace skyflow
