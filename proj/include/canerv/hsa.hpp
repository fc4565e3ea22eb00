#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "canerv/common.hpp"
#include "canerv/config.hpp"
#include "canerv/ops.hpp"
#include "canerv/video_io.hpp"

namespace canerv {

// ---------------------------------------------------------------------------
// Structure maps used as supervision targets.

inline FeatureMap to_gray(const FeatureMap& rgb) {
  if (rgb.c == 1) return rgb;
  if (rgb.c != 3) throw ConfigError("to_gray expects 1 or 3 channels");
  FeatureMap g(1, rgb.h, rgb.w);
  const double* r = rgb.channel(0);
  const double* gr = rgb.channel(1);
  const double* b = rgb.channel(2);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = 0.299 * r[i] + 0.587 * gr[i] + 0.114 * b[i];
  return g;
}

namespace detail {

inline double clamped(const FeatureMap& m, int y, int x) {
  y = std::clamp(y, 0, m.h - 1);
  x = std::clamp(x, 0, m.w - 1);
  return m.at(0, y, x);
}

template <int K>
FeatureMap filter_replicate(const FeatureMap& in, const std::array<double, K * K>& kernel) {
  FeatureMap out(1, in.h, in.w);
  constexpr int r = K / 2;
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double s = 0.0;
      for (int ky = 0; ky < K; ++ky)
        for (int kx = 0; kx < K; ++kx) s += kernel[ky * K + kx] * clamped(in, y + ky - r, x + kx - r);
      out.at(0, y, x) = s;
    }
  return out;
}

inline std::array<double, 25> gaussian5(double sigma) {
  std::array<double, 5> g{};
  double sum = 0.0;
  for (int i = 0; i < 5; ++i) {
    g[i] = std::exp(-0.5 * (i - 2) * (i - 2) / (sigma * sigma));
    sum += g[i];
  }
  std::array<double, 25> k{};
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) k[y * 5 + x] = g[y] * g[x] / (sum * sum);
  return k;
}

}  // namespace detail

// Second-order structure: 4-neighbour Laplacian with replicate padding.
inline FeatureMap laplacian_map(const FeatureMap& frame) {
  const FeatureMap g = to_gray(frame);
  return detail::filter_replicate<3>(g, {0, 1, 0, 1, -4, 1, 0, 1, 0});
}

// First-order structure: Gaussian 5x5 (sigma 1), Sobel gradients of the
// [0,1] image, non-maximum suppression, hysteresis thresholding.
inline FeatureMap canny_map(const FeatureMap& frame, double low, double high) {
  if (low < 0.0 || low > high) throw ConfigError("Canny thresholds must satisfy 0 <= low <= high");
  const FeatureMap g = to_gray(frame);
  const FeatureMap blurred = detail::filter_replicate<5>(g, detail::gaussian5(1.0));
  const FeatureMap gx = detail::filter_replicate<3>(
      blurred, {-1, 0, 1, -2, 0, 2, -1, 0, 1});
  const FeatureMap gy = detail::filter_replicate<3>(
      blurred, {-1, -2, -1, 0, 0, 0, 1, 2, 1});
  const int h = g.h, w = g.w;
  FeatureMap mag(1, h, w);
  for (std::size_t i = 0; i < mag.data.size(); ++i) mag.data[i] = std::hypot(gx.data[i], gy.data[i]);

  // 0 = suppressed, 1 = weak, 2 = strong.
  std::vector<std::uint8_t> state(static_cast<std::size_t>(h) * w, 0);
  constexpr double kTie = 1e-9;
  const double tan22 = std::tan(M_PI / 8.0);
  const double tan67 = std::tan(3.0 * M_PI / 8.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double m = mag.at(0, y, x);
      if (m < low || m == 0.0) continue;
      const double ax = std::abs(gx.at(0, y, x)), ay = std::abs(gy.at(0, y, x));
      bool keep;
      // Magnitudes within kTie of each other are treated as equal, so that
      // mirror-symmetric edges resolve the same way as in integer pipelines.
      auto gt = [&](double n) { return m > n + kTie; };
      auto ge = [&](double n) { return m >= n - kTie; };
      if (ay <= tan22 * ax) {
        keep = gt(detail::clamped(mag, y, x - 1)) && ge(detail::clamped(mag, y, x + 1));
      } else if (ay > tan67 * ax) {
        keep = gt(detail::clamped(mag, y - 1, x)) && ge(detail::clamped(mag, y + 1, x));
      } else {
        const int s = (gx.at(0, y, x) * gy.at(0, y, x) < 0) ? -1 : 1;
        keep = gt(detail::clamped(mag, y - 1, x - s)) && gt(detail::clamped(mag, y + 1, x + s));
      }
      if (keep) state[static_cast<std::size_t>(y) * w + x] = m >= high ? 2 : 1;
    }

  FeatureMap out(1, h, w);
  std::vector<int> stack;
  for (int i = 0; i < h * w; ++i)
    if (state[static_cast<std::size_t>(i)] == 2) stack.push_back(i);
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    if (out.data[static_cast<std::size_t>(i)] == 1.0) continue;
    out.data[static_cast<std::size_t>(i)] = 1.0;
    const int y = i / w, x = i % w;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const int j = ny * w + nx;
        if (state[static_cast<std::size_t>(j)] >= 1 && out.data[static_cast<std::size_t>(j)] == 0.0)
          stack.push_back(j);
      }
  }
  return out;
}

// Targets at the resolution of an attachment point `factor` times coarser
// than the frame.
struct HsaTargets {
  FeatureMap edge;
  FeatureMap lap;
};

inline HsaTargets make_hsa_targets(const FeatureMap& frame, const HsaConfig& cfg, int factor) {
  HsaTargets t;
  t.edge = ops::max_pool(canny_map(frame, cfg.canny_low, cfg.canny_high), factor);
  t.lap = ops::avg_pool(laplacian_map(frame), factor);
  return t;
}

// ---------------------------------------------------------------------------
// Residual structure branch.

struct HsaLayerView {
  const Tensor* conv_w;   // [C, C, 3, 3]
  const Tensor* conv_b;   // [C]
  const Tensor* head1_w;  // [1, C, 1, 1]
  const Tensor* head1_b;  // [1]
  const Tensor* head2_w;
  const Tensor* head2_b;

  int channels() const { return conv_w->shape.at(0); }
};

struct HsaOutputs {
  FeatureMap branch;  // F'
  FeatureMap fused;   // F + F'
  FeatureMap pred1;   // edge logits
  FeatureMap pred2;   // Laplacian regression
};

inline HsaOutputs hsa_forward(const HsaLayerView& p, const FeatureMap& features, bool with_heads = true) {
  const int c = p.channels();
  if (features.c != c || p.conv_w->shape.at(1) != c)
    throw ConfigError("HSA channel mismatch: features have " + std::to_string(features.c) +
                      ", branch expects " + std::to_string(c));
  if (features.h < 3 || features.w < 3) throw ConfigError("HSA needs at least 3x3 features");
  HsaOutputs o;
  o.branch = ops::conv2d(features, p.conv_w->ptr(), p.conv_b->ptr(), c, 3);
  o.fused = features;
  ops::add_inplace(o.fused, o.branch);
  if (with_heads) {
    o.pred1 = ops::conv2d(o.branch, p.head1_w->ptr(), p.head1_b->ptr(), 1, 1);
    o.pred2 = ops::conv2d(o.branch, p.head2_w->ptr(), p.head2_b->ptr(), 1, 1);
  }
  return o;
}

struct HsaLayerGrad {
  Tensor* conv_w;
  Tensor* conv_b;
  Tensor* head1_w;
  Tensor* head1_b;
  Tensor* head2_w;
  Tensor* head2_b;
};

// Returns d(loss)/d(features). Head gradients may be null maps (empty data)
// when the heads did not contribute to the loss.
inline FeatureMap hsa_backward(const HsaLayerView& p, const FeatureMap& features, const HsaOutputs& out,
                               const FeatureMap& dfused, const FeatureMap& dpred1,
                               const FeatureMap& dpred2, HsaLayerGrad g) {
  const int c = p.channels();
  FeatureMap dbranch = dfused;
  if (!dpred1.data.empty()) {
    FeatureMap d;
    ops::conv2d_backward(out.branch, p.head1_w->ptr(), 1, 1, dpred1, g.head1_w->ptr(), g.head1_b->ptr(), &d);
    ops::add_inplace(dbranch, d);
  }
  if (!dpred2.data.empty()) {
    FeatureMap d;
    ops::conv2d_backward(out.branch, p.head2_w->ptr(), 1, 1, dpred2, g.head2_w->ptr(), g.head2_b->ptr(), &d);
    ops::add_inplace(dbranch, d);
  }
  FeatureMap dfeat;
  ops::conv2d_backward(features, p.conv_w->ptr(), c, 3, dbranch, g.conv_w->ptr(), g.conv_b->ptr(), &dfeat);
  ops::add_inplace(dfeat, dfused);
  return dfeat;
}

struct HsaLossValue {
  double total = 0.0;
  double edge = 0.0;  // unweighted BCE
  double lap = 0.0;   // unweighted MSE
  FeatureMap dpred1;
  FeatureMap dpred2;
};

// w1 * BCE-with-logits(pred1, edge) + w2 * MSE(pred2, lap), both means.
inline HsaLossValue hsa_loss(const FeatureMap& pred1, const FeatureMap& pred2, const FeatureMap& gt_edge,
                             const FeatureMap& gt_lap, double w1, double w2, bool with_grad = false) {
  if (!pred1.same_shape(gt_edge) || !pred2.same_shape(gt_lap))
    throw ConfigError("HSA loss shape mismatch");
  HsaLossValue r;
  const double n1 = static_cast<double>(pred1.data.size());
  const double n2 = static_cast<double>(pred2.data.size());
  if (with_grad) {
    r.dpred1 = FeatureMap(pred1.c, pred1.h, pred1.w);
    r.dpred2 = FeatureMap(pred2.c, pred2.h, pred2.w);
  }
  for (std::size_t i = 0; i < pred1.data.size(); ++i) {
    const double z = pred1.data[i], y = gt_edge.data[i];
    r.edge += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    if (with_grad) r.dpred1.data[i] = w1 * (ops::sigmoid(z) - y) / n1;
  }
  for (std::size_t i = 0; i < pred2.data.size(); ++i) {
    const double d = pred2.data[i] - gt_lap.data[i];
    r.lap += d * d;
    if (with_grad) r.dpred2.data[i] = w2 * 2.0 * d / n2;
  }
  r.edge /= n1;
  r.lap /= n2;
  r.total = w1 * r.edge + w2 * r.lap;
  return r;
}

// MSE over all channels restricted to pixels where the reference frame has a
// Canny edge.
inline double edge_mse(const VideoSequence& recon, const VideoSequence& ref, double low = 0.1, double high = 0.2) {
  if (recon.num_frames() != ref.num_frames()) throw ConfigError("edge_mse: frame count mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (int t = 0; t < ref.num_frames(); ++t) {
    const FeatureMap& a = recon.frames[static_cast<std::size_t>(t)];
    const FeatureMap& b = ref.frames[static_cast<std::size_t>(t)];
    if (!a.same_shape(b)) throw ConfigError("edge_mse: shape mismatch");
    const FeatureMap edges = canny_map(b, low, high);
    for (std::size_t i = 0; i < edges.data.size(); ++i) {
      if (edges.data[i] == 0.0) continue;
      for (int k = 0; k < b.c; ++k) {
        const double d = a.data[b.plane() * k + i] - b.data[b.plane() * k + i];
        sum += d * d;
      }
      n += static_cast<std::size_t>(b.c);
    }
  }
  if (n == 0) throw ConfigError("edge_mse: reference has no edge pixels");
  return sum / static_cast<double>(n);
}

}  // namespace canerv
