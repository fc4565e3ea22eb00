#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "canerv/common.hpp"
#include "canerv/config.hpp"
#include "canerv/hsa.hpp"
#include "canerv/metrics.hpp"
#include "canerv/network.hpp"
#include "canerv/quantize.hpp"
#include "canerv/video_io.hpp"

namespace canerv {

struct LossReport {
  double total = 0.0;
  double mse_term = 0.0;     // MSE
  double msssim_term = 0.0;  // 1 - MS-SSIM
  double hsa_first_term = 0.0;   // edge BCE
  double hsa_second_term = 0.0;  // Laplacian MSE
  double psnr_running = 0.0;
};

struct LossWithGrad {
  LossReport report;
  OutputGradients grads;
};

// Supervision maps per frame, indexed by layer (empty where HSA is absent).
using FrameTargets = std::vector<HsaTargets>;

inline std::vector<FrameTargets> make_targets(const VideoSequence& seq, const ArchitectureConfig& cfg) {
  std::vector<FrameTargets> out;
  if (!cfg.hsa.enabled) return out;
  for (const auto& f : seq.frames) {
    FrameTargets ft(static_cast<std::size_t>(cfg.num_layers));
    for (int l : cfg.hsa_layers()) {
      const int factor = cfg.out_height() / cfg.layer_height(l);
      ft[static_cast<std::size_t>(l)] = make_hsa_targets(f, cfg.hsa, factor);
    }
    out.push_back(std::move(ft));
  }
  return out;
}

// loss_alpha * MSE + (1 - loss_alpha) * (1 - MS-SSIM) + w1 * edge + w2 * laplacian.
// `trace` supplies HSA predictions and `targets` their ground truth; either
// may be null when HSA is off.
inline LossWithGrad total_loss(const FeatureMap& pred, const FeatureMap& gt, const ForwardTrace* trace,
                               const FrameTargets* targets, const ArchitectureConfig& arch,
                               const TrainConfig& tcfg, bool want_grad = true) {
  if (!pred.same_shape(gt)) throw ConfigError("total_loss: shape mismatch");
  LossWithGrad r;
  const double alpha = tcfg.loss_alpha;
  const double n = static_cast<double>(pred.data.size());
  if (want_grad) r.grads.d_out = FeatureMap(pred.c, pred.h, pred.w);
  double sq = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - gt.data[i];
    sq += d * d;
    if (want_grad) r.grads.d_out.data[i] = alpha * 2.0 * d / n;
  }
  r.report.mse_term = sq / n;
  if (alpha < 1.0) {
    MsSsimResult ms = ms_ssim_with_grad(pred, gt, want_grad);
    r.report.msssim_term = 1.0 - ms.value;
    if (want_grad)
      for (std::size_t i = 0; i < pred.data.size(); ++i) r.grads.d_out.data[i] -= (1.0 - alpha) * ms.grad.data[i];
  }
  r.report.total = alpha * r.report.mse_term + (1.0 - alpha) * r.report.msssim_term;

  if (arch.hsa.enabled && trace && targets) {
    if (want_grad) {
      r.grads.hsa_pred1.resize(static_cast<std::size_t>(arch.num_layers));
      r.grads.hsa_pred2.resize(static_cast<std::size_t>(arch.num_layers));
    }
    for (int l : arch.hsa_layers()) {
      const auto li = static_cast<std::size_t>(l);
      const auto& lt = trace->layers.at(li);
      const auto& tg = targets->at(li);
      HsaLossValue h = hsa_loss(lt.hsa.pred1, lt.hsa.pred2, tg.edge, tg.lap, arch.hsa.w1, arch.hsa.w2, want_grad);
      r.report.hsa_first_term += h.edge;
      r.report.hsa_second_term += h.lap;
      r.report.total += h.total;
      if (want_grad) {
        r.grads.hsa_pred1[li] = std::move(h.dpred1);
        r.grads.hsa_pred2[li] = std::move(h.dpred2);
      }
    }
  }
  r.report.psnr_running = psnr_from_mse(r.report.mse_term);
  return r;
}

// ---------------------------------------------------------------------------

class Adam {
 public:
  explicit Adam(const TrainedModel& m, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : m.params) {
      m1_.emplace_back(p.value.size(), 0.0);
      m2_.emplace_back(p.value.size(), 0.0);
    }
  }

  void step(TrainedModel& m, const Gradients& g, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t k = 0; k < m.params.size(); ++k) {
      auto& w = m.params[k].value.data;
      const auto& gk = g[k].data;
      auto& a = m1_[k];
      auto& b = m2_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        a[i] = b1_ * a[i] + (1.0 - b1_) * gk[i];
        b[i] = b2_ * b[i] + (1.0 - b2_) * gk[i] * gk[i];
        w[i] -= lr * (a[i] / c1) / (std::sqrt(b[i] / c2) + eps_);
      }
    }
  }

 private:
  double b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m1_, m2_;
};

inline double cosine_lr(double base, long step, long total_steps) {
  if (total_steps <= 0) return base;
  return 0.5 * base * (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total_steps)));
}

// Current min/max range of every compressible tensor.
inline std::vector<QuantRange> current_ranges(const TrainedModel& m, int bits) {
  std::vector<QuantRange> r(m.params.size());
  for (std::size_t k = 0; k < m.params.size(); ++k) {
    const auto& d = m.params[k].value.data;
    if (d.empty()) continue;
    auto [lo, hi] = std::minmax_element(d.begin(), d.end());
    r[k] = {*lo, *hi, bits};
  }
  return r;
}

inline TrainedModel fake_quantized(const TrainedModel& m, const std::vector<QuantRange>& ranges) {
  TrainedModel q = m;
  for (std::size_t k = 0; k < q.params.size(); ++k) {
    auto& p = q.params[k];
    if (!p.compressible || p.value.data.empty()) continue;
    fake_quantize(p.value.data, ranges[k].min, ranges[k].max, ranges[k].bits);
  }
  return q;
}

struct TrainOptions {
  int epochs = 0;
  double lr = 5e-4;
  int fake_quant_bits = 0;  // > 0 enables straight-through fake quantization
  std::function<void(int epoch, const LossReport&)> on_epoch;
};

struct TrainResult {
  TrainedModel model;
  std::vector<LossReport> history;
  long steps = 0;
};

// Optimizes `model` in place over whole epochs of shuffled frames.
inline TrainResult fit(TrainedModel model, const VideoSequence& seq, const TrainConfig& tcfg, const TrainOptions& opt) {
  tcfg.validate();
  const auto& arch = model.config;
  arch.check_resolution(seq.height(), seq.width());
  if (seq.num_frames() != arch.num_frames)
    throw ConfigError("sequence has " + std::to_string(seq.num_frames()) + " frames, model expects " +
                      std::to_string(arch.num_frames));
  const auto targets = make_targets(seq, arch);
  const int frames = seq.num_frames();
  const int batch = std::min(tcfg.batch, frames);
  const long steps_per_epoch = (frames + batch - 1) / batch;
  const long total_steps = steps_per_epoch * opt.epochs;

  TrainResult res;
  Adam adam(model);
  Rng order_rng(mix_seed(tcfg.seed, 0x0DE5));
  std::vector<int> order(static_cast<std::size_t>(frames));
  long step = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order);
    LossReport acc;
    for (int b0 = 0; b0 < frames; b0 += batch) {
      const int b1 = std::min(frames, b0 + batch);
      Gradients g = zero_gradients(model);
      const TrainedModel* eval = &model;
      TrainedModel quantized;
      if (opt.fake_quant_bits > 0) {
        quantized = fake_quantized(model, current_ranges(model, opt.fake_quant_bits));
        eval = &quantized;
      }
      for (int i = b0; i < b1; ++i) {
        const int t = order[static_cast<std::size_t>(i)];
        ForwardTrace tr = forward_trace(*eval, t, arch.hsa.enabled);
        LossWithGrad lg = total_loss(tr.out, seq.frames[static_cast<std::size_t>(t)], &tr,
                                     targets.empty() ? nullptr : &targets[static_cast<std::size_t>(t)], arch, tcfg);
        if (!std::isfinite(lg.report.total))
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", frame " + std::to_string(t));
        const double inv = 1.0 / (b1 - b0);
        for (double& v : lg.grads.d_out.data) v *= inv;
        for (auto& m : lg.grads.hsa_pred1)
          for (double& v : m.data) v *= inv;
        for (auto& m : lg.grads.hsa_pred2)
          for (double& v : m.data) v *= inv;
        backward(*eval, tr, lg.grads, g);
        acc.total += lg.report.total;
        acc.mse_term += lg.report.mse_term;
        acc.msssim_term += lg.report.msssim_term;
        acc.hsa_first_term += lg.report.hsa_first_term;
        acc.hsa_second_term += lg.report.hsa_second_term;
      }
      adam.step(model, g, cosine_lr(opt.lr, step, total_steps));
      ++step;
    }
    acc.total /= frames;
    acc.mse_term /= frames;
    acc.msssim_term /= frames;
    acc.hsa_first_term /= frames;
    acc.hsa_second_term /= frames;
    acc.psnr_running = psnr_from_mse(acc.mse_term);
    res.history.push_back(acc);
    if (opt.on_epoch) opt.on_epoch(epoch, acc);
  }
  for (const auto& p : model.params)
    if (!p.value.all_finite()) throw NumericalError("non-finite weights in " + p.name);
  res.model = std::move(model);
  res.steps = step;
  return res;
}

inline TrainResult train(const VideoSequence& seq, const ArchitectureConfig& config, const TrainConfig& tcfg,
                         std::function<void(int, const LossReport&)> on_epoch = {}) {
  TrainOptions opt;
  opt.epochs = tcfg.epochs;
  opt.lr = tcfg.lr;
  opt.on_epoch = std::move(on_epoch);
  return fit(build_network(config, tcfg.seed), seq, tcfg, opt);
}

// Fine-tunes through fake quantization, then freezes per-tensor ranges so
// serialization reproduces exactly the quantized weights seen in training.
inline TrainResult qat_finetune(const TrainedModel& model, const VideoSequence& seq, const TrainConfig& tcfg) {
  TrainOptions opt;
  opt.epochs = tcfg.qat_epochs;
  opt.lr = tcfg.lr * tcfg.qat_lr_scale;
  opt.fake_quant_bits = tcfg.qat_bits;
  TrainResult r = fit(model, seq, tcfg, opt);
  const auto ranges = current_ranges(r.model, tcfg.qat_bits);
  for (std::size_t k = 0; k < r.model.params.size(); ++k) {
    auto& p = r.model.params[k];
    if (p.compressible && !p.value.data.empty()) p.frozen_range = ranges[k];
  }
  return r;
}

inline VideoSequence reconstruct(const TrainedModel& m) {
  VideoSequence seq;
  seq.name = "reconstruction";
  for (int t = 0; t < m.config.num_frames; ++t) seq.frames.push_back(forward(m, t));
  return seq;
}

inline void write_loss_csv(const std::string& path, const std::vector<LossReport>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,total,mse,msssim,hsa1,hsa2,psnr\n";
  out.precision(10);
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& h = history[e];
    out << e << ',' << h.total << ',' << h.mse_term << ',' << h.msssim_term << ',' << h.hsa_first_term << ','
        << h.hsa_second_term << ',' << h.psnr_running << '\n';
  }
}

}  // namespace canerv
