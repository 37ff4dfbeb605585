#pragma once

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "skyflow/dataset.hpp"
#include "skyflow/temporal.hpp"

namespace skyflow {

// Mean squared difference over valid pixels and channels.
inline double mse(const SkyImage& a, const SkyImage& b) {
  if (a.size() != b.size()) throw PreconditionError("mse: dimension mismatch");
  DiscDomain disc = a.disc();
  double acc = 0.0;
  size_t n = 0;
  for (int y = 0; y < a.size(); ++y)
    for (int x = 0; x < a.size(); ++x) {
      if (!disc.valid(x, y)) continue;
      for (int c = 0; c < 3; ++c) {
        double d = double(a.at(x, y, c)) - double(b.at(x, y, c));
        acc += d * d;
      }
      ++n;
    }
  return acc / (double(n) * 3.0);
}

inline double psnr_from_mse(double mse_value, double peak = 1.0) {
  if (mse_value <= 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse_value / (peak * peak));
}

inline double psnr(const SkyImage& a, const SkyImage& b, double peak = 1.0) {
  return psnr_from_mse(mse(a, b), peak);
}

// Mean local SSIM on luminance over 8x8 sliding windows that lie entirely
// inside the valid disc. Standard constants C1=(0.01 peak)^2, C2=(0.03 peak)^2.
inline double ssim(const SkyImage& a, const SkyImage& b, int window = 8,
                   double peak = 1.0) {
  if (a.size() != b.size()) throw PreconditionError("ssim: dimension mismatch");
  const int n = a.size();
  if (window > n) throw PreconditionError("ssim: window larger than image");
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);

  std::vector<double> la(size_t(n) * n), lb(size_t(n) * n);
  DiscDomain disc = a.disc();
  std::vector<uint8_t> valid(size_t(n) * n, 0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      size_t i = size_t(y) * n + x;
      la[i] = luminance(a.at(x, y, 0), a.at(x, y, 1), a.at(x, y, 2));
      lb[i] = luminance(b.at(x, y, 0), b.at(x, y, 1), b.at(x, y, 2));
      valid[i] = disc.valid(x, y);
    }

  const double wn = double(window) * window;
  double acc = 0.0;
  size_t windows = 0;
  for (int y = 0; y + window <= n; ++y)
    for (int x = 0; x + window <= n; ++x) {
      bool ok = true;
      for (int j = 0; j < window && ok; ++j)
        for (int i = 0; i < window; ++i)
          if (!valid[size_t(y + j) * n + (x + i)]) {
            ok = false;
            break;
          }
      if (!ok) continue;
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int j = 0; j < window; ++j)
        for (int i = 0; i < window; ++i) {
          double va = la[size_t(y + j) * n + (x + i)];
          double vb = lb[size_t(y + j) * n + (x + i)];
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      double ma = sa / wn, mb = sb / wn;
      double va = saa / wn - ma * ma;
      double vb = sbb / wn - mb * mb;
      double cov = sab / wn - ma * mb;
      double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
      double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
      acc += num / den;
      ++windows;
    }
  if (windows == 0) throw PreconditionError("ssim: no fully valid window");
  return acc / double(windows);
}

struct MetricReport {
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  int frame_count = 0;
  // psnr and ssim are computed per frame and then averaged; mse is the mean
  // of the per-frame values as well
  std::string averaging = "per-frame";
};

inline nlohmann::json metric_report_to_json(const MetricReport& r) {
  nlohmann::json j;
  j["mse"] = r.mse;
  if (std::isinf(r.psnr))
    j["psnr"] = "inf";  // JSON has no infinity literal
  else
    j["psnr"] = r.psnr;
  j["ssim"] = r.ssim;
  j["frame_count"] = r.frame_count;
  j["averaging"] = r.averaging;
  return j;
}

inline std::string format_metric_table(const MetricReport& r) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "metric      value\n";
  os << "----------  ----------\n";
  auto row = [&](const char* name, double v) {
    os << name;
    for (size_t i = std::strlen(name); i < 12; ++i) os << ' ';
    os << v << "\n";
  };
  row("mse", r.mse);
  row("psnr", r.psnr);
  row("ssim", r.ssim);
  row("frames", double(r.frame_count));
  return os.str();
}

using Predictor = std::function<SkyImage(const SkyImage&)>;

// Next-frame prediction error over a test sequence: each frame's successor is
// compared with the predictor's output for that frame.
inline MetricReport evaluate_test_set(const CaptureSequence& test,
                                      const Predictor& predict) {
  if (test.frames.size() < 2)
    throw PreconditionError("evaluate_test_set: need at least 2 test frames");
  MetricReport r;
  double sum_mse = 0, sum_psnr = 0, sum_ssim = 0;
  for (size_t i = 0; i + 1 < test.frames.size(); ++i) {
    SkyImage pred = predict(test.frames[i]);
    double m = mse(pred, test.frames[i + 1]);
    sum_mse += m;
    sum_psnr += psnr_from_mse(m);
    sum_ssim += ssim(pred, test.frames[i + 1]);
    ++r.frame_count;
  }
  r.mse = sum_mse / r.frame_count;
  r.psnr = sum_psnr / r.frame_count;
  r.ssim = sum_ssim / r.frame_count;
  return r;
}

inline MetricReport evaluate_test_set(const CaptureSequence& test,
                                      UNetModel& flownet, UNetModel& cloudnet) {
  return evaluate_test_set(test, [&](const SkyImage& img) {
    return xi_step(flownet, cloudnet, img).first;
  });
}

// --- flow-magnitude distribution comparison --------------------------------------

struct HistogramComparison {
  std::vector<double> bin_edges;
  std::vector<std::vector<double>> real_hist;  // one histogram per frame pair
  std::vector<std::vector<double>> gen_hist;
  std::vector<double> l1_distance;             // per frame pair
};

inline std::vector<double> default_flow_bins() {
  return {0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
}

// Per-frame histograms of re-estimated flow magnitudes over cloud pixels for
// a real and a generated sequence, with the L1 distance per frame index.
inline HistogramComparison flow_histogram_compare(
    const std::vector<SkyImage>& real, const std::vector<SkyImage>& generated,
    const std::vector<double>& bin_edges, const FarnebackParams& params = {},
    float cloud_threshold = kDefaultCloudThreshold) {
  if (real.size() < 2 || generated.size() < 2)
    throw PreconditionError("flow_histogram_compare: both sequences need >= 2 frames");
  HistogramComparison out;
  out.bin_edges = bin_edges;
  size_t pairs = std::min(real.size(), generated.size()) - 1;
  for (size_t i = 0; i < pairs; ++i) {
    auto hist_of = [&](const std::vector<SkyImage>& seq) {
      FlowField flow = farneback_flow(seq[i], seq[i + 1], params);
      CloudMask mask = compute_cloud_mask(seq[i], cloud_threshold);
      return flow_magnitude_histogram(mask_flow(flow, mask), mask, bin_edges);
    };
    std::vector<double> hr = hist_of(real);
    std::vector<double> hg = hist_of(generated);
    double d = 0.0;
    for (size_t b = 0; b < hr.size(); ++b) d += std::abs(hr[b] - hg[b]);
    out.real_hist.push_back(std::move(hr));
    out.gen_hist.push_back(std::move(hg));
    out.l1_distance.push_back(d);
  }
  return out;
}

// CSV rows: frame, bin lower edge, real mass, generated mass.
inline void write_histogram_csv(const std::string& path,
                                const HistogramComparison& cmp) {
  std::ofstream f(path);
  if (!f) throw ConfigError("write_histogram_csv: cannot open " + path);
  f << std::setprecision(17);
  f << "frame,bin_edge,real_mass,generated_mass\n";
  for (size_t i = 0; i < cmp.real_hist.size(); ++i)
    for (size_t b = 0; b < cmp.real_hist[i].size(); ++b)
      f << i << "," << cmp.bin_edges[b] << "," << cmp.real_hist[i][b] << ","
        << cmp.gen_hist[i][b] << "\n";
  if (!f) throw Error("write_histogram_csv: write failed for " + path);
}

// --- loss ablation -----------------------------------------------------------------

struct AblationResult {
  double mse_only = 0.0;        // lambda = 0
  double mse_plus_cosine = 0.0; // lambda from the config
};

// Train both networks twice with identical seeds, data and budget, once with
// the cosine term disabled, and report the final next-frame test MSE of each
// variant.
inline AblationResult ablation_run(const CaptureSequence& train,
                                   const CaptureSequence& test,
                                   const UNetConfig& flow_arch,
                                   const UNetConfig& cloud_arch,
                                   const TrainConfig& base_cfg,
                                   const FarnebackParams& params = {},
                                   float cloud_threshold = kDefaultCloudThreshold) {
  auto pairs = build_flownet_pairs(train, params, cloud_threshold);
  auto run_variant = [&](double lambda) {
    TrainConfig cfg = base_cfg;
    cfg.lambda = lambda;
    cfg.stop_when_mse_below = 0.0;  // fixed budget for a fair comparison
    TrainResult flow = train_flownet(pairs, flow_arch, cfg);
    auto triples = build_cloudnet_pairs(train, flow.model);
    TrainResult cloud = train_cloudnet(triples, cloud_arch, cfg);
    return evaluate_test_set(test, flow.model, cloud.model).mse;
  };
  AblationResult r;
  r.mse_only = run_variant(0.0);
  r.mse_plus_cosine = run_variant(base_cfg.lambda);
  return r;
}

}  // namespace skyflow
