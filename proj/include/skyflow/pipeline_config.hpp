#pragma once

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "skyflow/dataset.hpp"
#include "skyflow/temporal.hpp"
#include "skyflow/train.hpp"

namespace skyflow {

// The single JSON document that drives the CLI. Flags override file values,
// file values override these defaults.
struct PipelineConfig {
  int version = 1;
  uint64_t seed = 1234;
  bool deterministic = true;

  int resolution = 256;
  double delta_t = 10.0;
  int substeps = 30;
  int keyframes = 1;

  ToneCurve tone;         // tone.scale doubles as the normalization peak
  double peak = 1.0;

  FarnebackParams farneback;
  float cloud_threshold = kDefaultCloudThreshold;

  UNetConfig flownet = UNetConfig::flownet(256);
  UNetConfig cloudnet = UNetConfig::cloudnet(256);
  TrainConfig train;

  std::string dataset_dir;
  std::string checkpoint_dir;
  std::string output_dir;

  SequenceConfig sequence_config() const {
    SequenceConfig s;
    s.delta_t = delta_t;
    s.keyframe_count = keyframes;
    s.substeps = substeps;
    s.projection = FisheyeProjection(resolution);
    s.tone = tone;
    s.peak = peak;
    return s;
  }

  void validate() const {
    if (version != 1) throw ConfigError("config: unsupported version");
    if (resolution < 8) throw ConfigError("config: resolution too small");
    flownet.validate();
    cloudnet.validate();
    train.validate();
    farneback.validate();
    sequence_config().validate();
    if (cloud_threshold <= 0) throw ConfigError("config: cloud threshold must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const FarnebackParams& p) {
  j = nlohmann::json{{"levels", p.pyramid_levels}, {"scale", p.pyramid_scale},
                     {"window", p.window},         {"poly_n", p.poly_n},
                     {"poly_sigma", p.poly_sigma}, {"iterations", p.iterations}};
}

inline void from_json(const nlohmann::json& j, FarnebackParams& p) {
  p.pyramid_levels = j.value("levels", 4);
  p.pyramid_scale = j.value("scale", 0.5);
  p.window = j.value("window", 15);
  p.poly_n = j.value("poly_n", 5);
  p.poly_sigma = j.value("poly_sigma", 1.1);
  p.iterations = j.value("iterations", 3);
}

inline void to_json(nlohmann::json& j, const ToneCurve& t) {
  j = nlohmann::json{{"kind", tone_curve_kind_name(t.kind)},
                     {"exponent", t.exponent},
                     {"scale", t.scale}};
}

inline void from_json(const nlohmann::json& j, ToneCurve& t) {
  t.kind = tone_curve_kind_from_name(j.value("kind", std::string("identity")));
  t.exponent = j.value("exponent", 2.2);
  t.scale = j.value("scale", 1.0);
}

inline void to_json(nlohmann::json& j, const TrainConfig& t) {
  j = nlohmann::json{{"epochs", t.epochs},
                     {"batch_size", t.batch_size},
                     {"learning_rate", t.learning_rate},
                     {"lr_decay", t.lr_decay},
                     {"lambda", t.lambda},
                     {"optimizer", t.optimizer},
                     {"seed", t.seed},
                     {"stop_when_mse_below", t.stop_when_mse_below}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& t) {
  t.epochs = j.value("epochs", 500);
  t.batch_size = j.value("batch_size", 1);
  t.learning_rate = j.value("learning_rate", 2e-4);
  t.lr_decay = j.value("lr_decay", 1.0);
  t.lambda = j.value("lambda", 1.0);
  t.optimizer = j.value("optimizer", std::string("adam"));
  t.seed = j.value("seed", uint64_t(0));
  t.stop_when_mse_below = j.value("stop_when_mse_below", 0.0);
}

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = nlohmann::json{{"version", c.version},
                     {"seed", c.seed},
                     {"deterministic", c.deterministic},
                     {"projection",
                      {{"resolution", c.resolution}, {"kind", "equidistant"}}},
                     {"resolution", c.resolution},
                     {"delta_t", c.delta_t},
                     {"substeps", c.substeps},
                     {"keyframes", c.keyframes},
                     {"tone", c.tone},
                     {"peak", c.peak},
                     {"farneback", c.farneback},
                     {"cloud_threshold", c.cloud_threshold},
                     {"flownet", c.flownet},
                     {"cloudnet", c.cloudnet},
                     {"train", c.train},
                     {"paths",
                      {{"dataset", c.dataset_dir},
                       {"checkpoints", c.checkpoint_dir},
                       {"output", c.output_dir}}}};
}

inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
  c.version = j.value("version", 1);
  c.seed = j.value("seed", uint64_t(1234));
  c.deterministic = j.value("deterministic", true);
  c.resolution = j.value("resolution", 256);
  if (j.contains("projection")) {
    const auto& p = j["projection"];
    c.resolution = p.value("resolution", c.resolution);
    std::string kind = p.value("kind", std::string("equidistant"));
    if (kind != "equidistant")
      throw ConfigError("config: unsupported projection kind " + kind);
  }
  c.delta_t = j.value("delta_t", 10.0);
  c.substeps = j.value("substeps", 30);
  c.keyframes = j.value("keyframes", 1);
  if (j.contains("tone")) c.tone = j["tone"].get<ToneCurve>();
  c.peak = j.value("peak", 1.0);
  if (j.contains("farneback")) c.farneback = j["farneback"].get<FarnebackParams>();
  c.cloud_threshold = j.value("cloud_threshold", kDefaultCloudThreshold);
  c.flownet = UNetConfig::flownet(c.resolution);
  c.cloudnet = UNetConfig::cloudnet(c.resolution);
  if (j.contains("flownet")) c.flownet = j["flownet"].get<UNetConfig>();
  if (j.contains("cloudnet")) c.cloudnet = j["cloudnet"].get<UNetConfig>();
  if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
  if (j.contains("paths")) {
    c.dataset_dir = j["paths"].value("dataset", std::string());
    c.checkpoint_dir = j["paths"].value("checkpoints", std::string());
    c.output_dir = j["paths"].value("output", std::string());
  }
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  try {
    return j.get<PipelineConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
}

// Relative checkpoint paths resolve under $SKYFLOW_CHECKPOINT_ROOT when set.
inline std::string resolve_checkpoint_path(const std::string& path) {
  namespace fs = std::filesystem;
  if (path.empty() || fs::path(path).is_absolute()) return path;
  if (const char* root = std::getenv("SKYFLOW_CHECKPOINT_ROOT"))
    return (fs::path(root) / path).string();
  return path;
}

}  // namespace skyflow
