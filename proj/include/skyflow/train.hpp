#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "skyflow/unet.hpp"

namespace skyflow {

struct LossReport {
  double mse = 0.0;
  double cosine = 0.0;
  double total = 0.0;
};

struct TrainConfig {
  int epochs = 500;
  int batch_size = 1;
  double learning_rate = 2e-4;
  double lr_decay = 1.0;  // per-epoch multiplier (1 = constant rate)
  double lambda = 1.0;    // cosine term weight
  std::string optimizer = "adam";
  uint64_t seed = 0;
  // optional early stop: finish the run once the epoch-mean mse term drops
  // below this bound (0 disables)
  double stop_when_mse_below = 0.0;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("train: learning rate must be > 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0))
      throw ConfigError("train: lr decay must lie in (0,1]");
    if (lambda < 0) throw ConfigError("train: lambda must be >= 0");
    if (optimizer != "adam") throw ConfigError("train: unknown optimizer " + optimizer);
  }
};

namespace detail {

// MSE over valid pixels/channels plus the mean per-pixel cosine defect
// 1 - cos(angle) between the channel vectors; pixels where either vector is
// (near) zero contribute nothing to the cosine term.
inline LossReport composite_loss_tensor(const Tensor& pred, const Tensor& target,
                                        double lambda,
                                        const std::vector<uint8_t>& valid,
                                        Tensor* grad) {
  if (pred.c != target.c || pred.h != target.h || pred.w != target.w)
    throw PreconditionError("composite_loss: shape mismatch");
  const int C = pred.c;
  const size_t n = pred.plane_size();
  if (grad) {
    *grad = Tensor(pred.c, pred.h, pred.w);
  }
  size_t n_valid = 0;
  for (size_t i = 0; i < n; ++i) n_valid += valid[i] ? 1 : 0;
  if (n_valid == 0) throw PreconditionError("composite_loss: empty valid region");

  const double inv_mse_n = 1.0 / (double(n_valid) * C);
  const double inv_cos_n = 1.0 / double(n_valid);
  constexpr double kEps = 1e-12;

  double mse = 0.0, cosine = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (!valid[i]) continue;
    double dot = 0.0, np = 0.0, nt = 0.0;
    for (int c = 0; c < C; ++c) {
      double p = pred.v[size_t(c) * n + i];
      double t = target.v[size_t(c) * n + i];
      double d = p - t;
      mse += d * d;
      dot += p * t;
      np += p * p;
      nt += t * t;
      if (grad) grad->v[size_t(c) * n + i] += float(2.0 * d * inv_mse_n);
    }
    np = std::sqrt(np);
    nt = std::sqrt(nt);
    if (np > kEps && nt > kEps) {
      // 1 - cos(angle) written as half the squared distance of the unit
      // vectors: identical value, but exactly zero for identical inputs and
      // never negative under rounding
      double defect = 0.0;
      for (int c = 0; c < C; ++c) {
        double u = pred.v[size_t(c) * n + i] / np;
        double w = target.v[size_t(c) * n + i] / nt;
        defect += 0.5 * (u - w) * (u - w);
      }
      cosine += defect;
      if (grad && lambda != 0.0) {
        for (int c = 0; c < C; ++c) {
          double p = pred.v[size_t(c) * n + i];
          double t = target.v[size_t(c) * n + i];
          double dcos = t / (np * nt) - dot * p / (np * np * np * nt);
          grad->v[size_t(c) * n + i] += float(-lambda * dcos * inv_cos_n);
        }
      }
    }
  }
  LossReport r;
  r.mse = mse * inv_mse_n;
  r.cosine = cosine * inv_cos_n;
  r.total = r.mse + lambda * r.cosine;
  return r;
}

}  // namespace detail

// Public raster-level loss over the valid disc.
inline LossReport composite_loss(const Raster& pred, const Raster& target,
                                 double lambda) {
  if (!pred.same_shape(target))
    throw PreconditionError("composite_loss: shape mismatch");
  Tensor p = raster_to_tensor(pred);
  Tensor t = raster_to_tensor(target);
  auto valid = disc_validity(pred.width);
  return detail::composite_loss_tensor(p, t, lambda, valid, nullptr);
}

inline LossReport composite_loss(const SkyImage& pred, const SkyImage& target,
                                 double lambda) {
  return composite_loss(pred.rgb, target.rgb, lambda);
}

// --- Adam ---------------------------------------------------------------------

class AdamOptimizer {
 public:
  AdamOptimizer(UNetModel& model, double lr)
      : model_(model), lr_(lr) {
    m_.resize(model.params.size());
    v_.resize(model.params.size());
    for (size_t i = 0; i < model.params.size(); ++i) {
      m_[i].assign(model.params[i].data.size(), 0.f);
      v_[i].assign(model.params[i].data.size(), 0.f);
    }
  }

  void set_learning_rate(double lr) { lr_ = lr; }

  void step(const std::vector<std::vector<float>>& grads) {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, t_);
    const double bc2 = 1.0 - std::pow(b2, t_);
    for (size_t i = 0; i < model_.params.size(); ++i) {
      auto& p = model_.params[i];
      if (!p.trainable) continue;
      for (size_t k = 0; k < p.data.size(); ++k) {
        double g = grads[i][k];
        double m = m_[i][k] = float(b1 * m_[i][k] + (1 - b1) * g);
        double v = v_[i][k] = float(b2 * v_[i][k] + (1 - b2) * g * g);
        p.data[k] -= float(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps));
      }
    }
  }

 private:
  UNetModel& model_;
  double lr_;
  int t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

struct TrainResult {
  UNetModel model;
  std::vector<LossReport> history;  // one entry per epoch
};

struct FlownetPair {
  SkyImage input;
  EncodedFlow target;
};

struct CloudnetTriple {
  SkyImage input;
  EncodedFlow flow;
  SkyImage target;
};

namespace detail {

inline std::vector<std::vector<float>> make_grad_store(const UNetModel& m) {
  std::vector<std::vector<float>> g(m.params.size());
  for (size_t i = 0; i < m.params.size(); ++i)
    g[i].assign(m.params[i].data.size(), 0.f);
  return g;
}

inline void zero_grads(std::vector<std::vector<float>>& g) {
  for (auto& v : g) std::fill(v.begin(), v.end(), 0.f);
}

inline void scale_grads(std::vector<std::vector<float>>& g, float s) {
  for (auto& v : g)
    for (float& x : v) x *= s;
}

// Shared epoch loop: samples are (input tensor, target tensor) pairs at the
// model resolution. Gradients are averaged over each batch group.
template <typename SampleAt>
inline TrainResult train_loop(UNetModel model, size_t sample_count,
                              SampleAt&& sample_at, const TrainConfig& cfg) {
  cfg.validate();
  if (sample_count == 0)
    throw PreconditionError("train: empty training set");

  TrainResult result;
  AdamOptimizer opt(model, cfg.learning_rate);
  auto grads = make_grad_store(model);
  auto valid = disc_validity(model.config.resolution);
  UNetCache cache;

  double lr = cfg.learning_rate;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_learning_rate(lr);
    LossReport epoch_loss;
    size_t in_batch = 0;
    for (size_t s = 0; s < sample_count; ++s) {
      auto [input, target] = sample_at(s);
      Tensor out = unet_forward(model, input, /*training=*/true, &cache);
      Tensor grad_out;
      LossReport loss = composite_loss_tensor(out, target, cfg.lambda, valid,
                                              &grad_out);
      if (!std::isfinite(loss.total))
        throw NumericError("train: NaN loss at epoch " + std::to_string(epoch) +
                           ", sample " + std::to_string(s) + ", seed " +
                           std::to_string(cfg.seed));
      epoch_loss.mse += loss.mse;
      epoch_loss.cosine += loss.cosine;
      epoch_loss.total += loss.total;
      unet_backward(model, cache, grad_out, grads);
      if (++in_batch == size_t(cfg.batch_size) || s + 1 == sample_count) {
        scale_grads(grads, 1.f / float(in_batch));
        opt.step(grads);
        zero_grads(grads);
        in_batch = 0;
      }
    }
    epoch_loss.mse /= double(sample_count);
    epoch_loss.cosine /= double(sample_count);
    epoch_loss.total /= double(sample_count);
    result.history.push_back(epoch_loss);
    if (cfg.stop_when_mse_below > 0.0 && epoch_loss.mse < cfg.stop_when_mse_below)
      break;
    lr *= cfg.lr_decay;
  }
  result.model = std::move(model);
  return result;
}

}  // namespace detail

// FlowNet training: inputs are sky frames, targets the masked flow encodings
// produced by the optical-flow pipeline.
inline TrainResult train_flownet(const std::vector<FlownetPair>& pairs,
                                 const UNetConfig& arch, const TrainConfig& cfg) {
  for (const auto& p : pairs)
    if (p.input.size() != arch.resolution || p.target.width() != arch.resolution)
      throw PreconditionError("train_flownet: sample resolution mismatch");
  UNetModel model = build_unet(arch, UNetRole::FlowNet, cfg.seed);
  return detail::train_loop(
      std::move(model), pairs.size(),
      [&](size_t i) {
        return std::pair<Tensor, Tensor>(sky_image_to_tensor(pairs[i].input),
                                         raster_to_tensor(pairs[i].target.ch));
      },
      cfg);
}

// CloudNet training: inputs are (frame, FlowNet flow) concatenations, targets
// the consecutive frames.
inline TrainResult train_cloudnet(const std::vector<CloudnetTriple>& triples,
                                  const UNetConfig& arch, const TrainConfig& cfg) {
  for (const auto& t : triples)
    if (t.input.size() != arch.resolution || t.flow.width() != arch.resolution ||
        t.target.size() != arch.resolution)
      throw PreconditionError("train_cloudnet: sample resolution mismatch");
  UNetModel model = build_unet(arch, UNetRole::CloudNet, cfg.seed);
  return detail::train_loop(
      std::move(model), triples.size(),
      [&](size_t i) {
        Tensor in = concat_channels(sky_image_to_tensor(triples[i].input),
                                    raster_to_tensor(triples[i].flow.ch));
        return std::pair<Tensor, Tensor>(std::move(in),
                                         raster_to_tensor(triples[i].target.rgb));
      },
      cfg);
}

// --- finite-difference gradient check -----------------------------------------

struct GradientCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  // truncation errors of the central difference at h and 2h on the probe
  // parameter with the strongest gradient
  double trunc_h = 0.0;
  double trunc_2h = 0.0;
};

// Central finite differences against the analytic backward pass on `count`
// sampled trainable parameters. Batch norm runs in inference-statistics mode
// so the loss is a plain differentiable function of the weights.
inline GradientCheckResult gradient_check(UNetModel& model, const Tensor& probe,
                                          int count, double h = 1e-3,
                                          uint64_t seed = 0) {
  Rng rng(seed + 0x67726164ULL);
  Tensor target(model.config.out_channels, model.config.resolution,
                model.config.resolution);
  for (float& v : target.v) v = float(rng.uniform());

  std::vector<uint8_t> valid(target.plane_size(), 1);

  // one training-mode pass seeds the running statistics with real values
  {
    UNetCache warm;
    (void)unet_forward(model, probe, /*training=*/true, &warm);
  }

  auto loss_of = [&]() {
    Tensor out = unet_forward(model, probe, /*training=*/false, nullptr);
    LossReport r = detail::composite_loss_tensor(out, target, 0.0, valid, nullptr);
    return r.total;
  };

  // analytic gradients
  auto grads = detail::make_grad_store(model);
  {
    UNetCache cache;
    Tensor out = unet_forward(model, probe, /*training=*/false, &cache);
    Tensor grad_out;
    detail::composite_loss_tensor(out, target, 0.0, valid, &grad_out);
    unet_backward(model, cache, grad_out, grads);
  }

  // Stratified slot selection over the convolution weights of every stage.
  // Channel-wide parameters (biases, batch-norm gains and shifts) are not
  // finite-difference checkable on a relu network: perturbing them shifts an
  // entire channel across many activation kinks, which contaminates the
  // difference quotient with an O(h) term that has nothing to do with the
  // analytic gradient. A single weight perturbs through a localized patch
  // pattern and stays in the linear regime.
  std::vector<std::pair<int, size_t>> slots;
  {
    size_t weight_tensors = 0;
    for (const auto& p : model.params)
      if (p.trainable && p.name.size() > 2 &&
          p.name.compare(p.name.size() - 2, 2, ".w") == 0)
        ++weight_tensors;
    size_t per_tensor = size_t(count) * 3 / std::max<size_t>(1, weight_tensors) + 4;
    for (size_t pi = 0; pi < model.params.size(); ++pi) {
      const auto& p = model.params[pi];
      if (!p.trainable || p.name.size() <= 2 ||
          p.name.compare(p.name.size() - 2, 2, ".w") != 0)
        continue;
      std::vector<size_t> order(p.data.size());
      for (size_t k = 0; k < order.size(); ++k) order[k] = k;
      std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return std::abs(grads[pi][a]) > std::abs(grads[pi][b]);
      });
      for (size_t k = 0; k < std::min(per_tensor, order.size()); ++k)
        slots.emplace_back(int(pi), order[k]);
    }
    std::sort(slots.begin(), slots.end(), [&](auto a, auto b) {
      return std::abs(grads[a.first][a.second]) >
             std::abs(grads[b.first][b.second]);
    });
  }

  auto fd_at = [&](std::pair<int, size_t> slot, double step) {
    auto [pi, k] = slot;
    float saved = model.params[pi].data[k];
    model.params[pi].data[k] = saved + float(step);
    double lp = loss_of();
    model.params[pi].data[k] = saved - float(step);
    double lm = loss_of();
    model.params[pi].data[k] = saved;
    return (lp - lm) / (2 * step);
  };

  GradientCheckResult res;
  for (const auto& slot : slots) {
    if (res.checked >= count) break;
    double an = grads[slot.first][slot.second];
    if (std::abs(an) < 1e-4) continue;  // below the float32 noise floor
    double fd = fd_at(slot, h);
    // central differences are only meaningful where the loss is locally
    // smooth; a slot whose difference quotient is unstable under halving h
    // sits on a relu kink and is skipped
    double fd_half = fd_at(slot, h * 0.5);
    if (std::abs(fd - fd_half) > 0.05 * std::max({std::abs(fd), std::abs(an), 1e-4}))
      continue;
    double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
    res.max_rel_error = std::max(res.max_rel_error, std::abs(fd - an) / denom);
    ++res.checked;
  }

  // Second-order convergence probe on a smooth parameter: a weight of the
  // final decoder convolution sees no relu between itself and the loss (only
  // batch-norm affine and the smooth output head), so its finite differences
  // carry the clean quadratic truncation term. The step is widened until the
  // truncation clears the float32 noise floor.
  {
    std::string last = "dec" + std::to_string(model.config.depth()) + ".w";
    int pi = model.index.at(last);
    size_t k = 0;
    double best = 0.0;
    for (size_t i = 0; i < model.params[pi].data.size(); ++i)
      if (std::abs(grads[pi][i]) > best) {
        best = std::abs(grads[pi][i]);
        k = i;
      }
    double an = grads[pi][k];
    for (double step = 0.1; step <= 1.7; step *= 2.0) {
      double e1 = std::abs(fd_at({pi, k}, step) - an);
      double e2 = std::abs(fd_at({pi, k}, 2.0 * step) - an);
      res.trunc_h = e1;
      res.trunc_2h = e2;
      if (e1 > 1e-5) break;
    }
  }
  return res;
}

}  // namespace skyflow
