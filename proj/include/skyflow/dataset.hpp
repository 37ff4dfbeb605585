#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "skyflow/farneback.hpp"
#include "skyflow/image_io.hpp"
#include "skyflow/noise.hpp"
#include "skyflow/sky_image.hpp"
#include "skyflow/train.hpp"
#include "skyflow/unet.hpp"

namespace skyflow {

struct CaptureSequence {
  std::vector<SkyImage> frames;
  double interval = 10.0;  // seconds between frames
  std::string device;
  std::string location;

  int resolution() const { return frames.empty() ? 0 : frames.front().size(); }
};

// Lexicographically ordered PNG frames from a directory (or its frames/
// subdirectory), linearized and disc-validated. A sequence.json next to the
// frames may carry interval/device/location metadata.
inline CaptureSequence load_sequence(const std::string& directory,
                                     double interval = 10.0) {
  namespace fs = std::filesystem;
  fs::path dir(directory);
  if (!fs::is_directory(dir))
    throw ConfigError("load_sequence: not a directory: " + directory);
  if (fs::is_directory(dir / "frames")) dir /= "frames";

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw PreconditionError("load_sequence: no PNG frames in " + dir.string());

  CaptureSequence seq;
  seq.interval = interval;
  fs::path meta = dir / "sequence.json";
  if (!fs::exists(meta)) meta = dir.parent_path() / "sequence.json";
  if (fs::exists(meta)) {
    std::ifstream f(meta);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, true, true);
    seq.interval = j.value("interval", seq.interval);
    seq.device = j.value("device", "");
    seq.location = j.value("location", "");
  }

  for (const auto& file : files) {
    Raster raw;
    try {
      raw = read_png(file.string(), /*linearize=*/true);
    } catch (const Error& e) {
      throw PreconditionError("load_sequence: frame " + file.filename().string() +
                              ": " + e.what());
    }
    if (raw.width != raw.height || raw.channels != 3)
      throw PreconditionError("load_sequence: frame " + file.filename().string() +
                              " is not a square RGB image");
    if (!seq.frames.empty() && raw.width != seq.frames.front().size())
      throw PreconditionError("load_sequence: frame " + file.filename().string() +
                              " resolution mismatch (" + std::to_string(raw.width) +
                              " vs " + std::to_string(seq.frames.front().size()) + ")");
    SkyImage img;
    img.rgb = std::move(raw);
    img.enforce_invariants();
    seq.frames.push_back(std::move(img));
  }
  if (seq.frames.size() < 2)
    throw PreconditionError("load_sequence: need at least 2 frames, found " +
                            std::to_string(seq.frames.size()));
  return seq;
}

// Contiguous temporal split: the earliest fraction trains, the remainder
// tests. Adjacent frames are near-duplicates, so a random split would leak.
inline std::pair<CaptureSequence, CaptureSequence> split_train_test(
    const CaptureSequence& seq, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw PreconditionError("split_train_test: fraction must lie in (0,1)");
  size_t n = seq.frames.size();
  size_t test = size_t(std::floor(double(n) * (1.0 - train_fraction) + 1e-9));
  size_t train = n - test;
  if (train < 2 || test < 2)
    throw PreconditionError("split_train_test: split " + std::to_string(train) +
                            "/" + std::to_string(test) +
                            " leaves fewer than 2 frames on one side");
  CaptureSequence a, b;
  a.interval = b.interval = seq.interval;
  a.device = b.device = seq.device;
  a.location = b.location = seq.location;
  a.frames.assign(seq.frames.begin(), seq.frames.begin() + ptrdiff_t(train));
  b.frames.assign(seq.frames.begin() + ptrdiff_t(train), seq.frames.end());
  return {std::move(a), std::move(b)};
}

// FlowNet training pairs: each frame paired with the encoded, cloud-masked
// optical flow towards its successor.
inline std::vector<FlownetPair> build_flownet_pairs(
    const CaptureSequence& seq, const FarnebackParams& params = {},
    float cloud_threshold = kDefaultCloudThreshold) {
  if (seq.frames.size() < 2)
    throw PreconditionError("build_flownet_pairs: need at least 2 frames");
  std::vector<FlownetPair> pairs;
  pairs.reserve(seq.frames.size() - 1);
  for (size_t i = 0; i + 1 < seq.frames.size(); ++i) {
    FlowField flow = farneback_flow(seq.frames[i], seq.frames[i + 1], params);
    CloudMask mask = compute_cloud_mask(seq.frames[i], cloud_threshold);
    pairs.push_back({seq.frames[i], encode_flow(mask_flow(flow, mask))});
  }
  return pairs;
}

// CloudNet training triples: (frame, trained FlowNet's prediction for it,
// next frame as target).
inline std::vector<CloudnetTriple> build_cloudnet_pairs(
    const CaptureSequence& seq, UNetModel& flownet) {
  if (seq.frames.size() < 2)
    throw PreconditionError("build_cloudnet_pairs: need at least 2 frames");
  std::vector<CloudnetTriple> triples;
  triples.reserve(seq.frames.size() - 1);
  for (size_t i = 0; i + 1 < seq.frames.size(); ++i)
    triples.push_back({seq.frames[i], flownet_infer(flownet, seq.frames[i]),
                       seq.frames[i + 1]});
  return triples;
}

// --- synthetic scenes ----------------------------------------------------------

struct SyntheticLayer {
  Vec2f velocity;            // px per frame interval
  int octaves = 4;
  int base_frequency = 6;    // noise cells across the frame at octave 0
  double coverage = 0.45;    // nothing below this noise value is cloud
};

// Procedural cloud layers advected by exact per-layer velocities over a sky
// gradient. The noise domain is periodic, so frame k is an exact translate
// of frame 0; that makes the sequences usable as flow/advection oracles.
struct SyntheticSceneSpec {
  int resolution = 256;
  std::vector<SyntheticLayer> layers;
  float sky_zenith[3] = {0.10f, 0.28f, 0.72f};
  float sky_horizon[3] = {0.32f, 0.48f, 0.85f};
  uint64_t seed = 1;

  void validate() const {
    if (resolution < 8) throw ConfigError("synthetic: resolution too small");
    if (layers.empty()) throw ConfigError("synthetic: need at least one layer");
    for (const auto& l : layers) {
      if (!std::isfinite(l.velocity.x) || !std::isfinite(l.velocity.y))
        throw ConfigError("synthetic: velocity must be finite");
      if (!(l.coverage >= 0.0 && l.coverage < 1.0))
        throw ConfigError("synthetic: coverage must lie in [0,1)");
      if (l.octaves < 1 || l.base_frequency < 1)
        throw ConfigError("synthetic: octaves and base frequency must be >= 1");
    }
  }

  // uniform backdrop = every visible pixel translates with the layer,
  // making the single-layer ground-truth flow exact everywhere
  bool uniform_sky() const {
    return sky_zenith[0] == sky_horizon[0] && sky_zenith[1] == sky_horizon[1] &&
           sky_zenith[2] == sky_horizon[2];
  }
};

inline void to_json(nlohmann::json& j, const SyntheticLayer& l) {
  j = nlohmann::json{{"velocity", {l.velocity.x, l.velocity.y}},
                     {"octaves", l.octaves},
                     {"base_frequency", l.base_frequency},
                     {"coverage", l.coverage}};
}

inline void from_json(const nlohmann::json& j, SyntheticLayer& l) {
  auto v = j.at("velocity");
  l.velocity = {v.at(0).get<float>(), v.at(1).get<float>()};
  l.octaves = j.value("octaves", 4);
  l.base_frequency = j.value("base_frequency", 6);
  l.coverage = j.value("coverage", 0.45);
}

inline void to_json(nlohmann::json& j, const SyntheticSceneSpec& s) {
  j = nlohmann::json{{"resolution", s.resolution},
                     {"layers", s.layers},
                     {"sky_zenith", {s.sky_zenith[0], s.sky_zenith[1], s.sky_zenith[2]}},
                     {"sky_horizon", {s.sky_horizon[0], s.sky_horizon[1], s.sky_horizon[2]}},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticSceneSpec& s) {
  s.resolution = j.at("resolution").get<int>();
  s.layers = j.at("layers").get<std::vector<SyntheticLayer>>();
  if (j.contains("sky_zenith"))
    for (int c = 0; c < 3; ++c) s.sky_zenith[c] = j["sky_zenith"].at(c).get<float>();
  if (j.contains("sky_horizon"))
    for (int c = 0; c < 3; ++c) s.sky_horizon[c] = j["sky_horizon"].at(c).get<float>();
  s.seed = j.value("seed", uint64_t(1));
}

struct SyntheticSequence {
  CaptureSequence capture;
  std::vector<FlowField> gt_flow;  // frame k -> k+1, size frames-1
};

namespace detail {

inline double coverage_alpha(double n, double threshold) {
  constexpr double kSoft = 0.12;
  double t = (n - threshold) / kSoft;
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace detail

inline SyntheticSequence generate_synthetic_sequence(
    const SyntheticSceneSpec& spec, int frame_count) {
  spec.validate();
  if (frame_count < 2)
    throw PreconditionError("generate_synthetic_sequence: need >= 2 frames");

  SyntheticSequence out;
  out.capture.interval = 10.0;
  out.capture.device = "synthetic";
  out.capture.location = "procedural";

  const int res = spec.resolution;
  DiscDomain disc(res);
  const bool single = spec.layers.size() == 1;

  for (int k = 0; k < frame_count; ++k) {
    SkyImage img(res);
    FlowField flow(res, res);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        if (!disc.valid(x, y)) continue;
        double u = (x + 0.5) / res;
        double v = (y + 0.5) / res;
        // radial sky gradient, zenith at the center
        double du = u - 0.5, dv = v - 0.5;
        double t = std::clamp(std::sqrt(du * du + dv * dv) * 2.0, 0.0, 1.0);
        double rgb[3];
        for (int c = 0; c < 3; ++c)
          rgb[c] = spec.sky_zenith[c] + (spec.sky_horizon[c] - spec.sky_zenith[c]) * t;

        Vec2f gt = single ? spec.layers[0].velocity : Vec2f{0.f, 0.f};
        for (size_t li = 0; li < spec.layers.size(); ++li) {
          const auto& layer = spec.layers[li];
          uint64_t salt = splitmix64(spec.seed * 1315423911u + li);
          double lu = u - double(k) * layer.velocity.x / res;
          double lv = v - double(k) * layer.velocity.y / res;
          double n = noise::fbm01(lu, lv, layer.octaves, layer.base_frequency, salt);
          double alpha = detail::coverage_alpha(n, layer.coverage);
          if (alpha <= 0.0) continue;
          double shade = 0.62 + 0.38 * n;
          // sunlit-cloud tint: warm against the blue sky, and safely on the
          // cloud side of the red/blue ratio threshold
          double cloud[3] = {shade, shade * 0.94, shade * 0.82};
          for (int c = 0; c < 3; ++c) rgb[c] += (cloud[c] - rgb[c]) * alpha;
          if (!single && alpha >= 0.5) gt = layer.velocity;
        }
        for (int c = 0; c < 3; ++c)
          img.at(x, y, c) = float(std::clamp(rgb[c], 0.0, 1.0));
        flow.set(x, y, gt);
      }
    out.capture.frames.push_back(std::move(img));
    if (k + 1 < frame_count) out.gt_flow.push_back(std::move(flow));
  }
  return out;
}

}  // namespace skyflow
