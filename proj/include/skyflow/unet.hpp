#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "skyflow/common.hpp"
#include "skyflow/flow_field.hpp"
#include "skyflow/layers.hpp"
#include "skyflow/sky_image.hpp"
#include "skyflow/tensor.hpp"

namespace skyflow {

enum class UNetRole { FlowNet, CloudNet };

inline const char* unet_role_name(UNetRole r) {
  return r == UNetRole::FlowNet ? "flownet" : "cloudnet";
}

inline UNetRole unet_role_from_name(const std::string& s) {
  if (s == "flownet") return UNetRole::FlowNet;
  if (s == "cloudnet") return UNetRole::CloudNet;
  throw ConfigError("unknown UNet role: " + s);
}

// Architecture description. The encoder applies `depth` 4x4 stride-2
// convolutions (LeakyReLU before all but the first, batch norm after all but
// the first and last); the decoder mirrors it with `depth` stages of
// (ReLU, bilinear x2 upsample, 3x3 conv, batch norm), the upsampling ahead of
// the convolution so the output keeps full-resolution detail without
// checkerboard artifacts. Skip connections concatenate each encoder output
// with the decoder stage of matching size.
struct UNetConfig {
  int in_channels = 3;
  int out_channels = 3;
  std::vector<int> widths = {64, 128, 256, 512, 512, 512, 512, 512};
  int resolution = 256;
  int encoder_kernel = 4;
  int decoder_kernel = 3;
  int stride = 2;
  float leaky_slope = 0.2f;

  int depth() const { return int(widths.size()); }

  void validate() const {
    if (depth() < 2) throw ConfigError("unet: need at least 2 stages");
    for (int w : widths)
      if (w < 1) throw ConfigError("unet: feature widths must be >= 1");
    if (in_channels < 1 || out_channels < 1)
      throw ConfigError("unet: channel counts must be >= 1");
    if (resolution % (1 << depth()) != 0)
      throw ConfigError("unet: resolution " + std::to_string(resolution) +
                        " not divisible by 2^depth = " +
                        std::to_string(1 << depth()));
  }

  // Full-scale networks: depth 8, widths 64-128-256-512-512-512-512-512.
  static UNetConfig flownet(int resolution = 256) {
    UNetConfig c;
    c.in_channels = 3;
    c.resolution = resolution;
    return c;
  }
  static UNetConfig cloudnet(int resolution = 256) {
    UNetConfig c;
    c.in_channels = 6;
    c.resolution = resolution;
    return c;
  }

  // Reduced variant for small experiments; width growth mirrors the
  // 64-128-256-512... progression from a smaller base.
  static UNetConfig reduced(int resolution, int depth, int base_width,
                            int in_channels = 3, int out_channels = 3) {
    UNetConfig c;
    c.in_channels = in_channels;
    c.out_channels = out_channels;
    c.resolution = resolution;
    c.widths.clear();
    int w = base_width;
    for (int i = 0; i < depth; ++i) {
      c.widths.push_back(w);
      if (i < 3) w *= 2;
    }
    return c;
  }
};

inline void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = nlohmann::json{{"in_channels", c.in_channels},
                     {"out_channels", c.out_channels},
                     {"widths", c.widths},
                     {"resolution", c.resolution},
                     {"encoder_kernel", c.encoder_kernel},
                     {"decoder_kernel", c.decoder_kernel},
                     {"stride", c.stride},
                     {"leaky_slope", c.leaky_slope}};
}

inline void from_json(const nlohmann::json& j, UNetConfig& c) {
  c.in_channels = j.value("in_channels", 3);
  c.out_channels = j.value("out_channels", 3);
  c.widths = j.value("widths", std::vector<int>{64, 128, 256, 512, 512, 512, 512, 512});
  c.resolution = j.value("resolution", 256);
  c.encoder_kernel = j.value("encoder_kernel", 4);
  c.decoder_kernel = j.value("decoder_kernel", 3);
  c.stride = j.value("stride", 2);
  c.leaky_slope = j.value("leaky_slope", 0.2f);
}

struct NamedTensor {
  std::string name;
  std::vector<int> dims;
  std::vector<float> data;
  bool trainable = true;

  size_t count() const {
    size_t n = 1;
    for (int d : dims) n *= size_t(d);
    return n;
  }
};

struct UNetModel {
  UNetConfig config;
  UNetRole role = UNetRole::FlowNet;
  std::vector<NamedTensor> params;
  std::map<std::string, int> index;

  NamedTensor& tensor(const std::string& name) { return params[index.at(name)]; }
  const NamedTensor& tensor(const std::string& name) const {
    return params[index.at(name)];
  }

  bool finite() const {
    for (const auto& p : params)
      for (float v : p.data)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

namespace detail {

inline void add_param(UNetModel& m, const std::string& name,
                      std::vector<int> dims, bool trainable, float fill,
                      Rng* rng, double gain) {
  NamedTensor t;
  t.name = name;
  t.dims = std::move(dims);
  t.trainable = trainable;
  t.data.assign(t.count(), fill);
  if (rng) {
    // Kaiming-style fan-in scaled normal init
    size_t fan_in = t.count() / size_t(t.dims[0]);
    double std_dev = gain * std::sqrt(2.0 / double(fan_in));
    for (float& v : t.data) v = float(rng->normal() * std_dev);
  }
  m.index[t.name] = int(m.params.size());
  m.params.push_back(std::move(t));
}

struct DecoderDims {
  int in_c, out_c;
};

inline std::vector<DecoderDims> decoder_dims(const UNetConfig& c) {
  const int d = c.depth();
  std::vector<DecoderDims> dims(d);
  int prev = c.widths[d - 1];
  for (int j = 1; j <= d; ++j) {
    int in_c = j == 1 ? c.widths[d - 1] : prev + c.widths[d - j];
    int out_c = j == d ? c.out_channels : c.widths[d - j - 1];
    dims[j - 1] = {in_c, out_c};
    prev = out_c;
  }
  return dims;
}

}  // namespace detail

// Deterministic model construction: a fixed seed yields bit-identical
// weights. Batch-norm gammas start at 1, everything else per the init rule.
inline UNetModel build_unet(const UNetConfig& config, UNetRole role,
                            uint64_t seed) {
  config.validate();
  UNetModel m;
  m.config = config;
  m.role = role;
  Rng rng(seed ^ (role == UNetRole::FlowNet ? 0x666c6f77ULL : 0x636c6f75ULL));

  const int d = config.depth();
  for (int i = 1; i <= d; ++i) {
    int in_c = i == 1 ? config.in_channels : config.widths[i - 2];
    int out_c = config.widths[i - 1];
    std::string p = "enc" + std::to_string(i);
    detail::add_param(m, p + ".w",
                      {out_c, in_c, config.encoder_kernel, config.encoder_kernel},
                      true, 0.f, &rng, 1.0);
    detail::add_param(m, p + ".b", {out_c}, true, 0.f, nullptr, 0.0);
    if (i > 1 && i < d) {
      detail::add_param(m, p + ".bn.gamma", {out_c}, true, 1.f, nullptr, 0.0);
      detail::add_param(m, p + ".bn.beta", {out_c}, true, 0.f, nullptr, 0.0);
      detail::add_param(m, p + ".bn.running_mean", {out_c}, false, 0.f, nullptr, 0.0);
      detail::add_param(m, p + ".bn.running_var", {out_c}, false, 1.f, nullptr, 0.0);
    }
  }
  auto dd = detail::decoder_dims(config);
  for (int j = 1; j <= d; ++j) {
    std::string p = "dec" + std::to_string(j);
    detail::add_param(m, p + ".w",
                      {dd[j - 1].out_c, dd[j - 1].in_c, config.decoder_kernel,
                       config.decoder_kernel},
                      true, 0.f, &rng, 1.0);
    detail::add_param(m, p + ".b", {dd[j - 1].out_c}, true, 0.f, nullptr, 0.0);
    detail::add_param(m, p + ".bn.gamma", {dd[j - 1].out_c}, true, 1.f, nullptr, 0.0);
    detail::add_param(m, p + ".bn.beta", {dd[j - 1].out_c}, true, 0.f, nullptr, 0.0);
    detail::add_param(m, p + ".bn.running_mean", {dd[j - 1].out_c}, false, 0.f,
                      nullptr, 0.0);
    detail::add_param(m, p + ".bn.running_var", {dd[j - 1].out_c}, false, 1.f,
                      nullptr, 0.0);
  }
  return m;
}

// Per-pass intermediate storage for backpropagation.
struct UNetCache {
  std::vector<Tensor> enc_preact;    // stage inputs before the leaky relu
  std::vector<nn::ConvCache> enc_conv;
  std::vector<nn::BnCache> enc_bn;

  std::vector<Tensor> dec_concat;  // stage inputs before relu
  std::vector<nn::ConvCache> dec_conv;
  std::vector<nn::BnCache> dec_bn;

  Tensor head_in;   // pre-activation of the output head
  Tensor head_out;
};

namespace detail {

inline Tensor apply_head(const Tensor& x, UNetRole role) {
  Tensor y = x;
  if (role == UNetRole::CloudNet) {
    for (float& v : y.v) v = 1.f / (1.f + std::exp(-v));
  } else {
    // angle channels squash to [-1,1]; the magnitude channel uses a shifted
    // softplus that maps 0 -> 0, clamped to stay non-negative
    const size_t n = y.plane_size();
    float* s = y.plane(0);
    float* c = y.plane(1);
    float* m = y.plane(2);
    for (size_t i = 0; i < n; ++i) {
      s[i] = std::tanh(s[i]);
      c[i] = std::tanh(c[i]);
      float sp = nn::softplus(m[i]) - float(std::log(2.0));
      m[i] = sp > 0.f ? sp : 0.f;
    }
  }
  return y;
}

inline Tensor head_backward(const Tensor& dy, const Tensor& pre,
                            const Tensor& out, UNetRole role) {
  Tensor dx = dy;
  if (role == UNetRole::CloudNet) {
    for (size_t i = 0; i < dx.v.size(); ++i) {
      float y = out.v[i];
      dx.v[i] *= y * (1.f - y);
    }
  } else {
    const size_t n = dx.plane_size();
    for (int c = 0; c < 2; ++c) {
      float* d = dx.plane(c);
      const float* y = out.plane(c);
      for (size_t i = 0; i < n; ++i) d[i] *= 1.f - y[i] * y[i];
    }
    float* d = dx.plane(2);
    const float* x = pre.plane(2);
    for (size_t i = 0; i < n; ++i) {
      float g = x[i] > 0.f ? 1.f / (1.f + std::exp(-x[i])) : 0.f;
      d[i] *= g;
    }
  }
  return dx;
}

}  // namespace detail

// Forward pass. In training mode batch-norm uses per-sample statistics and
// updates the running ones; in inference mode it reads the running
// statistics. Pass a cache to enable a subsequent backward().
inline Tensor unet_forward(UNetModel& m, const Tensor& input, bool training,
                           UNetCache* cache) {
  const UNetConfig& c = m.config;
  if (input.c != c.in_channels || input.h != c.resolution ||
      input.w != c.resolution)
    throw PreconditionError("unet_forward: input shape mismatch");

  const int d = c.depth();
  std::vector<Tensor> enc_out(d);
  if (cache) {
    cache->enc_preact.assign(d, {});
    cache->enc_conv.assign(d, {});
    cache->enc_bn.assign(d, {});
    cache->dec_concat.assign(d, {});
    cache->dec_conv.assign(d, {});
    cache->dec_bn.assign(d, {});
  }

  Tensor cur = input;
  for (int i = 1; i <= d; ++i) {
    std::string p = "enc" + std::to_string(i);
    Tensor conv_in;
    if (i == 1) {
      conv_in = std::move(cur);
    } else {
      if (cache) cache->enc_preact[i - 1] = cur;
      conv_in = nn::leaky_relu(cur, c.leaky_slope);
    }
    nn::ConvShape shape{i == 1 ? c.in_channels : c.widths[i - 2],
                        c.widths[i - 1], c.encoder_kernel, c.stride, 1};
    Tensor y = nn::conv_forward(conv_in, shape, m.tensor(p + ".w").data,
                                m.tensor(p + ".b").data,
                                cache ? &cache->enc_conv[i - 1] : nullptr);
    if (i > 1 && i < d) {
      y = nn::bn_forward(y, m.tensor(p + ".bn.gamma").data,
                         m.tensor(p + ".bn.beta").data,
                         m.tensor(p + ".bn.running_mean").data,
                         m.tensor(p + ".bn.running_var").data, training, 0.1f,
                         cache ? &cache->enc_bn[i - 1] : nullptr);
    }
    enc_out[i - 1] = y;
    cur = std::move(y);
  }

  auto dd = detail::decoder_dims(c);
  for (int j = 1; j <= d; ++j) {
    std::string p = "dec" + std::to_string(j);
    Tensor concat_in =
        j == 1 ? enc_out[d - 1] : concat_channels(cur, enc_out[d - j]);
    if (cache) cache->dec_concat[j - 1] = concat_in;
    Tensor act = nn::relu(concat_in);
    Tensor up = nn::upsample2_forward(act);
    nn::ConvShape shape{dd[j - 1].in_c, dd[j - 1].out_c, c.decoder_kernel, 1, 1};
    Tensor y = nn::conv_forward(up, shape, m.tensor(p + ".w").data,
                                m.tensor(p + ".b").data,
                                cache ? &cache->dec_conv[j - 1] : nullptr);
    Tensor out = nn::bn_forward(y, m.tensor(p + ".bn.gamma").data,
                                m.tensor(p + ".bn.beta").data,
                                m.tensor(p + ".bn.running_mean").data,
                                m.tensor(p + ".bn.running_var").data, training,
                                0.1f, cache ? &cache->dec_bn[j - 1] : nullptr);
    cur = std::move(out);
  }

  if (cache) cache->head_in = cur;
  Tensor out = detail::apply_head(cur, m.role);
  if (cache) cache->head_out = out;
  return out;
}

// Gradient tape companion of unet_forward; accumulates parameter gradients
// into `grads` (same layout as m.params).
inline void unet_backward(UNetModel& m, UNetCache& cache, const Tensor& dout,
                          std::vector<std::vector<float>>& grads) {
  const UNetConfig& c = m.config;
  const int d = c.depth();
  auto dd = detail::decoder_dims(c);
  auto g = [&](const std::string& name) -> std::vector<float>& {
    return grads[m.index.at(name)];
  };

  Tensor cur = detail::head_backward(dout, cache.head_in, cache.head_out, m.role);

  std::vector<Tensor> skip_grads(d);  // into enc_out[k]
  for (int j = d; j >= 1; --j) {
    std::string p = "dec" + std::to_string(j);
    Tensor dconv_out = nn::bn_backward(cur, m.tensor(p + ".bn.gamma").data,
                                       cache.dec_bn[j - 1], g(p + ".bn.gamma"),
                                       g(p + ".bn.beta"));
    nn::ConvShape shape{dd[j - 1].in_c, dd[j - 1].out_c, c.decoder_kernel, 1, 1};
    Tensor dup = nn::conv_backward(dconv_out, shape, m.tensor(p + ".w").data,
                                   cache.dec_conv[j - 1], g(p + ".w"),
                                   g(p + ".b"));
    Tensor dact = nn::upsample2_backward(dup, cache.dec_concat[j - 1].h,
                                         cache.dec_concat[j - 1].w);
    Tensor dconcat = nn::relu_backward(dact, cache.dec_concat[j - 1]);
    if (j == 1) {
      skip_grads[d - 1] = std::move(dconcat);
    } else {
      // split the concat gradient: first block flows down the decoder,
      // second into the paired encoder output
      int main_c = dconcat.c - c.widths[d - j];
      Tensor dmain(main_c, dconcat.h, dconcat.w);
      Tensor dskip(c.widths[d - j], dconcat.h, dconcat.w);
      std::copy_n(dconcat.v.begin(), dmain.v.size(), dmain.v.begin());
      std::copy_n(dconcat.v.begin() + dmain.v.size(), dskip.v.size(),
                  dskip.v.begin());
      skip_grads[d - j] = std::move(dskip);
      cur = std::move(dmain);
    }
  }

  // encoder, deepest stage first; each stage adds its skip gradient
  Tensor denc = std::move(skip_grads[d - 1]);
  for (int i = d; i >= 1; --i) {
    std::string p = "enc" + std::to_string(i);
    if (i < d && skip_grads[i - 1].size() > 0) {
      for (size_t k = 0; k < denc.v.size(); ++k)
        denc.v[k] += skip_grads[i - 1].v[k];
    }
    Tensor dconv = denc;
    if (i > 1 && i < d)
      dconv = nn::bn_backward(denc, m.tensor(p + ".bn.gamma").data,
                              cache.enc_bn[i - 1], g(p + ".bn.gamma"),
                              g(p + ".bn.beta"));
    nn::ConvShape shape{i == 1 ? c.in_channels : c.widths[i - 2],
                        c.widths[i - 1], c.encoder_kernel, c.stride, 1};
    Tensor din = nn::conv_backward(dconv, shape, m.tensor(p + ".w").data,
                                   cache.enc_conv[i - 1], g(p + ".w"),
                                   g(p + ".b"));
    if (i > 1)
      denc = nn::leaky_relu_backward(din, cache.enc_preact[i - 1], c.leaky_slope);
    // i == 1: gradient w.r.t. the network input is discarded
  }
}

// --- inference wrappers -------------------------------------------------------

inline Tensor sky_image_to_tensor(const SkyImage& img) {
  return raster_to_tensor(img.rgb);
}

// Predicted flow encoding for one frame. Out-of-disc pixels are canonicalized
// to the zero-flow encoding (0, 1, 0).
inline EncodedFlow flownet_infer(UNetModel& model, const SkyImage& img) {
  if (model.role != UNetRole::FlowNet)
    throw PreconditionError("flownet_infer: model role is not flownet");
  if (img.size() != model.config.resolution)
    throw PreconditionError("flownet_infer: image resolution " +
                            std::to_string(img.size()) +
                            " != model resolution " +
                            std::to_string(model.config.resolution));
  Tensor out = unet_forward(model, sky_image_to_tensor(img), false, nullptr);
  EncodedFlow enc(out.w, out.h);
  DiscDomain disc(out.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      if (disc.valid(x, y)) {
        enc.ch.at(x, y, 0) = out.at(0, y, x);
        enc.ch.at(x, y, 1) = out.at(1, y, x);
        enc.ch.at(x, y, 2) = std::max(0.f, out.at(2, y, x));
      } else {
        enc.ch.at(x, y, 0) = 0.f;
        enc.ch.at(x, y, 1) = 1.f;
        enc.ch.at(x, y, 2) = 0.f;
      }
    }
  return enc;
}

// Next-frame prediction from a frame and its (predicted) flow encoding.
// Channel order of the concatenated input is fixed: image 0-2, flow 3-5.
inline SkyImage cloudnet_infer(UNetModel& model, const SkyImage& img,
                               const EncodedFlow& flow) {
  if (model.role != UNetRole::CloudNet)
    throw PreconditionError("cloudnet_infer: model role is not cloudnet");
  if (img.size() != model.config.resolution || flow.width() != img.size() ||
      flow.height() != img.size())
    throw PreconditionError("cloudnet_infer: resolution mismatch");
  Tensor in = concat_channels(sky_image_to_tensor(img), raster_to_tensor(flow.ch));
  Tensor out = unet_forward(model, in, false, nullptr);
  SkyImage pred(out.w);
  DiscDomain disc(out.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      if (!disc.valid(x, y)) continue;
      for (int ch = 0; ch < 3; ++ch)
        pred.at(x, y, ch) = std::clamp(out.at(ch, y, x), 0.f, 1.f);
    }
  return pred;
}

// --- checkpoint container -------------------------------------------------------
// "SKCK", u32 version, length-prefixed JSON header (role + config), then the
// named tensors as (u16 name length, name, u32 ndim, u32 dims..., float32 le).

inline void save_checkpoint(const std::string& path, const UNetModel& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("save_checkpoint: cannot open " + path);
  f.write("SKCK", 4);
  detail::write_u32le(f, 1u);
  nlohmann::json hdr;
  hdr["role"] = unet_role_name(m.role);
  hdr["config"] = m.config;
  std::string hs = hdr.dump();
  detail::write_u32le(f, uint32_t(hs.size()));
  f.write(hs.data(), std::streamsize(hs.size()));
  detail::write_u32le(f, uint32_t(m.params.size()));
  for (const auto& p : m.params) {
    uint16_t nl = uint16_t(p.name.size());
    unsigned char nb[2] = {static_cast<unsigned char>(nl & 0xff),
                           static_cast<unsigned char>(nl >> 8)};
    f.write(reinterpret_cast<const char*>(nb), 2);
    f.write(p.name.data(), nl);
    detail::write_u32le(f, uint32_t(p.dims.size()));
    for (int d : p.dims) detail::write_u32le(f, uint32_t(d));
    f.write(reinterpret_cast<const char*>(p.data.data()),
            std::streamsize(p.data.size() * sizeof(float)));
  }
  if (!f) throw Error("save_checkpoint: write failed for " + path);
}

inline UNetModel load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("load_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "SKCK", 4) != 0)
    throw ConfigError("load_checkpoint: bad magic in " + path);
  uint32_t version = detail::read_u32le(f);
  if (version != 1)
    throw ConfigError("load_checkpoint: unsupported version " +
                      std::to_string(version));
  uint32_t hlen = detail::read_u32le(f);
  std::string hs(hlen, '\0');
  f.read(hs.data(), hlen);
  nlohmann::json hdr = nlohmann::json::parse(hs);
  UNetModel m;
  m.role = unet_role_from_name(hdr.at("role").get<std::string>());
  m.config = hdr.at("config").get<UNetConfig>();
  uint32_t n = detail::read_u32le(f);
  for (uint32_t i = 0; i < n; ++i) {
    unsigned char nb[2];
    f.read(reinterpret_cast<char*>(nb), 2);
    uint16_t nl = uint16_t(nb[0]) | uint16_t(nb[1]) << 8;
    NamedTensor t;
    t.name.resize(nl);
    f.read(t.name.data(), nl);
    uint32_t nd = detail::read_u32le(f);
    t.dims.resize(nd);
    for (uint32_t k = 0; k < nd; ++k) t.dims[k] = int(detail::read_u32le(f));
    t.data.resize(t.count());
    f.read(reinterpret_cast<char*>(t.data.data()),
           std::streamsize(t.data.size() * sizeof(float)));
    t.trainable = t.name.find(".running_") == std::string::npos;
    m.index[t.name] = int(m.params.size());
    m.params.push_back(std::move(t));
  }
  if (!f) throw Error("load_checkpoint: truncated file " + path);
  if (!m.finite())
    throw NumericError("load_checkpoint: non-finite weights in " + path);
  return m;
}

}  // namespace skyflow
