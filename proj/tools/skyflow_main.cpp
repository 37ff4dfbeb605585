// Command-line driver for the dynamic sky-illumination pipeline.
//
// Subcommands: make-synthetic, train, synthesize, evaluate, histogram.
// Exit codes: 0 success, 2 usage/config, 3 violated precondition,
// 4 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <Eigen/Core>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "skyflow/skyflow.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitPrecondition = 3;
constexpr int kExitNumeric = 4;

std::string frame_name(int index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06d%s", index, ext);
  return buf;
}

void apply_determinism(const skyflow::PipelineConfig& cfg) {
  if (cfg.deterministic) {
    omp_set_num_threads(1);
    Eigen::setNbThreads(1);
  }
}

skyflow::PipelineConfig load_config_opt(const std::string& path) {
  if (path.empty()) return skyflow::PipelineConfig{};
  return skyflow::load_pipeline_config(path);
}

int cmd_make_synthetic(const std::string& spec_path, int frames,
                       const std::string& out_dir) {
  if (frames < 2)
    throw skyflow::ConfigError("make-synthetic: --frames must be >= 2");
  std::ifstream f(spec_path);
  if (!f) throw skyflow::ConfigError("make-synthetic: cannot open " + spec_path);
  skyflow::SyntheticSceneSpec spec;
  try {
    json j = json::parse(f, nullptr, true, true);
    spec = j.get<skyflow::SyntheticSceneSpec>();
  } catch (const json::exception& e) {
    throw skyflow::ConfigError("make-synthetic: " + spec_path + ": " + e.what());
  }
  spec.validate();

  skyflow::SyntheticSequence seq = skyflow::generate_synthetic_sequence(spec, frames);

  fs::create_directories(fs::path(out_dir) / "frames");
  fs::create_directories(fs::path(out_dir) / "flow");
  json manifest;
  manifest["version"] = 1;
  manifest["spec"] = spec;
  manifest["frame_count"] = frames;
  json frame_list = json::array();
  for (int k = 0; k < frames; ++k) {
    char stem[16];
    std::snprintf(stem, sizeof(stem), "%06d", k);
    std::string png = std::string(stem) + ".png";
    skyflow::write_png((fs::path(out_dir) / "frames" / png).string(),
                       seq.capture.frames[k].rgb);
    json entry;
    entry["index"] = k;
    entry["png"] = "frames/" + png;
    if (k + 1 < frames) {
      std::string fl = std::string(stem) + ".skfl";
      skyflow::write_flow((fs::path(out_dir) / "flow" / fl).string(),
                          seq.gt_flow[k]);
      entry["gt_flow"] = "flow/" + fl;
    }
    frame_list.push_back(entry);
  }
  manifest["frames"] = frame_list;
  {
    std::ofstream mf(fs::path(out_dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
  }
  {
    json meta;
    meta["interval"] = seq.capture.interval;
    meta["device"] = seq.capture.device;
    meta["location"] = seq.capture.location;
    std::ofstream sf(fs::path(out_dir) / "frames" / "sequence.json");
    sf << meta.dump(2) << "\n";
  }
  std::cout << "wrote " << frames << " frames to " << out_dir << "\n";
  return 0;
}

void write_loss_csv(const std::string& path,
                    const std::vector<skyflow::LossReport>& history) {
  std::ofstream f(path);
  f << "epoch,mse,cosine,total\n";
  for (size_t i = 0; i < history.size(); ++i)
    f << i << "," << history[i].mse << "," << history[i].cosine << ","
      << history[i].total << "\n";
}

int cmd_train(const skyflow::PipelineConfig& cfg, const std::string& role) {
  apply_determinism(cfg);
  if (cfg.dataset_dir.empty())
    throw skyflow::ConfigError("train: no dataset directory configured");
  std::string ckpt_dir = skyflow::resolve_checkpoint_path(
      cfg.checkpoint_dir.empty() ? "." : cfg.checkpoint_dir);
  fs::create_directories(ckpt_dir);

  skyflow::CaptureSequence seq =
      skyflow::load_sequence(cfg.dataset_dir, cfg.delta_t);

  skyflow::TrainConfig tc = cfg.train;
  if (tc.seed == 0) tc.seed = cfg.seed;

  if (role == "flownet") {
    auto pairs = skyflow::build_flownet_pairs(seq, cfg.farneback, cfg.cloud_threshold);
    skyflow::TrainResult r = skyflow::train_flownet(pairs, cfg.flownet, tc);
    skyflow::save_checkpoint((fs::path(ckpt_dir) / "flownet.ckpt").string(), r.model);
    write_loss_csv((fs::path(ckpt_dir) / "flownet_loss.csv").string(), r.history);
    std::cout << "flownet: " << r.history.size() << " epochs, final loss "
              << r.history.back().total << "\n";
  } else if (role == "cloudnet") {
    fs::path flow_ckpt = fs::path(ckpt_dir) / "flownet.ckpt";
    if (!fs::exists(flow_ckpt))
      throw skyflow::PreconditionError(
          "train: cloudnet requires an existing flownet checkpoint at " +
          flow_ckpt.string());
    skyflow::UNetModel flownet = skyflow::load_checkpoint(flow_ckpt.string());
    auto triples = skyflow::build_cloudnet_pairs(seq, flownet);
    skyflow::TrainResult r = skyflow::train_cloudnet(triples, cfg.cloudnet, tc);
    skyflow::save_checkpoint((fs::path(ckpt_dir) / "cloudnet.ckpt").string(), r.model);
    write_loss_csv((fs::path(ckpt_dir) / "cloudnet_loss.csv").string(), r.history);
    std::cout << "cloudnet: " << r.history.size() << " epochs, final loss "
              << r.history.back().total << "\n";
  } else {
    throw skyflow::ConfigError("train: role must be flownet or cloudnet");
  }
  return 0;
}

skyflow::SkyImage load_input_image(const std::string& path,
                                   const skyflow::ToneCurve& tone) {
  if (fs::path(path).extension() == ".pfm") {
    skyflow::Raster raw = skyflow::read_pfm(path);
    return skyflow::normalize_hdr(raw, tone);
  }
  skyflow::Raster raw = skyflow::read_png(path, /*linearize=*/true);
  if (raw.width != raw.height || raw.channels != 3)
    throw skyflow::PreconditionError("synthesize: input must be a square RGB image");
  skyflow::SkyImage img;
  img.rgb = std::move(raw);
  img.enforce_invariants();
  return img;
}

int cmd_synthesize(const skyflow::PipelineConfig& cfg, const std::string& input_path,
                   const std::string& out_dir) {
  apply_determinism(cfg);
  std::string ckpt_dir = skyflow::resolve_checkpoint_path(
      cfg.checkpoint_dir.empty() ? "." : cfg.checkpoint_dir);
  skyflow::UNetModel flownet =
      skyflow::load_checkpoint((fs::path(ckpt_dir) / "flownet.ckpt").string());
  skyflow::UNetModel cloudnet =
      skyflow::load_checkpoint((fs::path(ckpt_dir) / "cloudnet.ckpt").string());

  skyflow::SkyImage input = load_input_image(input_path, cfg.tone);
  if (input.size() != flownet.config.resolution ||
      input.size() != cloudnet.config.resolution)
    throw skyflow::PreconditionError(
        "synthesize: input resolution " + std::to_string(input.size()) +
        " does not match checkpoints (" +
        std::to_string(flownet.config.resolution) + ")");

  skyflow::SequenceConfig sc = cfg.sequence_config();
  sc.projection = skyflow::FisheyeProjection(input.size());
  auto frames = skyflow::synthesize_sequence(input, flownet, cloudnet, sc,
                                             cfg.farneback, cfg.cloud_threshold);

  fs::create_directories(out_dir);
  json manifest;
  manifest["version"] = 1;
  manifest["delta_t"] = sc.delta_t;
  manifest["substeps"] = sc.substeps;
  manifest["keyframes"] = sc.keyframe_count;
  json frame_list = json::array();
  for (const auto& fr : frames) {
    std::string png = frame_name(fr.index, ".png");
    std::string pfm = frame_name(fr.index, ".pfm");
    skyflow::write_png((fs::path(out_dir) / png).string(), fr.image.rgb);
    skyflow::write_pfm((fs::path(out_dir) / pfm).string(),
                       skyflow::expand_ldr(fr.image, cfg.tone, cfg.peak));
    json entry;
    entry["index"] = fr.index;
    entry["time"] = fr.time;
    entry["kind"] = skyflow::frame_kind_name(fr.kind);
    entry["png"] = png;
    entry["pfm"] = pfm;
    frame_list.push_back(entry);
  }
  manifest["frames"] = frame_list;
  std::ofstream mf(fs::path(out_dir) / "manifest.json");
  mf << manifest.dump(2) << "\n";
  std::cout << "wrote " << frames.size() << " frames to " << out_dir << "\n";
  return 0;
}

int cmd_evaluate(const skyflow::PipelineConfig& cfg, bool perfect_stub,
                 const std::string& out_dir) {
  apply_determinism(cfg);
  if (cfg.dataset_dir.empty())
    throw skyflow::ConfigError("evaluate: no dataset directory configured");
  skyflow::CaptureSequence test =
      skyflow::load_sequence(cfg.dataset_dir, cfg.delta_t);

  skyflow::MetricReport report;
  if (perfect_stub) {
    // oracle predictor: returns the true next frame; exercises the metric
    // path without checkpoints
    size_t cursor = 0;
    report = skyflow::evaluate_test_set(test, [&](const skyflow::SkyImage&) {
      return test.frames[++cursor];
    });
  } else {
    std::string ckpt_dir = skyflow::resolve_checkpoint_path(
        cfg.checkpoint_dir.empty() ? "." : cfg.checkpoint_dir);
    skyflow::UNetModel flownet =
        skyflow::load_checkpoint((fs::path(ckpt_dir) / "flownet.ckpt").string());
    skyflow::UNetModel cloudnet =
        skyflow::load_checkpoint((fs::path(ckpt_dir) / "cloudnet.ckpt").string());
    report = skyflow::evaluate_test_set(test, flownet, cloudnet);
  }

  fs::create_directories(out_dir);
  {
    std::ofstream jf(fs::path(out_dir) / "report.json");
    jf << skyflow::metric_report_to_json(report).dump(2) << "\n";
  }
  {
    std::ofstream tf(fs::path(out_dir) / "report.txt");
    tf << skyflow::format_metric_table(report);
  }
  std::cout << skyflow::format_metric_table(report);
  return 0;
}

int cmd_histogram(const skyflow::PipelineConfig& cfg, const std::string& real_dir,
                  const std::string& gen_dir, std::vector<double> bins,
                  const std::string& out_csv) {
  apply_determinism(cfg);
  skyflow::CaptureSequence real = skyflow::load_sequence(real_dir, cfg.delta_t);
  skyflow::CaptureSequence gen = skyflow::load_sequence(gen_dir, cfg.delta_t);
  if (bins.empty()) bins = skyflow::default_flow_bins();
  skyflow::HistogramComparison cmp = skyflow::flow_histogram_compare(
      real.frames, gen.frames, bins, cfg.farneback, cfg.cloud_threshold);
  skyflow::write_histogram_csv(out_csv, cmp);
  double mean = 0.0;
  for (double d : cmp.l1_distance) mean += d;
  mean /= double(cmp.l1_distance.size());
  std::cout << "frame pairs: " << cmp.l1_distance.size()
            << "  mean L1 distance: " << mean << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamic sky-illumination pipeline"};
  app.require_subcommand(1);

  std::string config_path, spec_path, out_dir, input_path, role;
  std::string real_dir, gen_dir, out_csv = "histogram.csv";
  std::string dataset_override, checkpoint_override;
  int frames = 0;
  int keyframes_override = -1, substeps_override = -1, epochs_override = -1;
  uint64_t seed_override = 0;
  bool perfect_stub = false;
  std::vector<double> bins;

  auto* mk = app.add_subcommand("make-synthetic", "generate a synthetic cloud sequence");
  mk->add_option("--spec", spec_path, "scene spec JSON")->required();
  mk->add_option("--frames", frames, "frame count")->required();
  mk->add_option("--out", out_dir, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train flownet or cloudnet");
  tr->add_option("--config", config_path, "pipeline config JSON")->required();
  tr->add_option("--role", role, "flownet | cloudnet")->required();
  tr->add_option("--dataset", dataset_override, "dataset directory override");
  tr->add_option("--checkpoints", checkpoint_override, "checkpoint directory override");
  tr->add_option("--epochs", epochs_override, "epoch count override");
  tr->add_option("--seed", seed_override, "seed override");

  auto* sy = app.add_subcommand("synthesize", "synthesize a frame sequence from one image");
  sy->add_option("--config", config_path, "pipeline config JSON")->required();
  sy->add_option("--input", input_path, "input hemispherical image (png or pfm)")->required();
  sy->add_option("--out", out_dir, "output directory")->required();
  sy->add_option("--checkpoints", checkpoint_override, "checkpoint directory override");
  sy->add_option("--keyframes", keyframes_override, "keyframe count override");
  sy->add_option("--substeps", substeps_override, "substeps per keyframe override");

  auto* ev = app.add_subcommand("evaluate", "next-frame metrics over a test set");
  ev->add_option("--config", config_path, "pipeline config JSON")->required();
  ev->add_option("--dataset", dataset_override, "test set directory override");
  ev->add_option("--checkpoints", checkpoint_override, "checkpoint directory override");
  ev->add_option("--out", out_dir, "report directory")->default_val(".");
  ev->add_flag("--perfect-stub", perfect_stub,
               "use the oracle next-frame predictor instead of checkpoints");

  auto* hi = app.add_subcommand("histogram", "flow-magnitude distribution comparison");
  hi->add_option("--config", config_path, "pipeline config JSON");
  hi->add_option("--real", real_dir, "directory of captured frames")->required();
  hi->add_option("--generated", gen_dir, "directory of generated frames")->required();
  hi->add_option("--bins", bins, "histogram bin edges");
  hi->add_option("--out", out_csv, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    skyflow::PipelineConfig cfg = load_config_opt(config_path);
    if (!dataset_override.empty()) cfg.dataset_dir = dataset_override;
    if (!checkpoint_override.empty()) cfg.checkpoint_dir = checkpoint_override;
    if (keyframes_override > 0) cfg.keyframes = keyframes_override;
    if (substeps_override > 0) cfg.substeps = substeps_override;
    if (epochs_override > 0) cfg.train.epochs = epochs_override;
    if (seed_override != 0) {
      cfg.seed = seed_override;
      cfg.train.seed = seed_override;
    }
    if (!config_path.empty()) cfg.validate();

    if (mk->parsed()) return cmd_make_synthetic(spec_path, frames, out_dir);
    if (tr->parsed()) return cmd_train(cfg, role);
    if (sy->parsed()) return cmd_synthesize(cfg, input_path, out_dir);
    if (ev->parsed()) return cmd_evaluate(cfg, perfect_stub, out_dir);
    if (hi->parsed()) return cmd_histogram(cfg, real_dir, gen_dir, bins, out_csv);
  } catch (const skyflow::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const skyflow::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const skyflow::PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPrecondition;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
