#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "canerv/common.hpp"
#include "canerv/config.hpp"
#include "canerv/dfa.hpp"
#include "canerv/hsa.hpp"
#include "canerv/ops.hpp"

namespace canerv {

// Per-tensor quantization range fixed after quantization-aware fine-tuning.
struct QuantRange {
  double min = 0.0;
  double max = 0.0;
  int bits = 6;
};

struct Param {
  std::string name;
  Tensor value;
  bool compressible = true;
  std::optional<QuantRange> frozen_range;
};

// Indices into TrainedModel::params. -1 marks an absent tensor.
struct LayerSlots {
  int conv_w = -1, conv_b = -1;
  std::vector<int> stage_w, stage_b;
  int dfa_bases = -1, dfa_u = -1, dfa_v = -1, dfa_alpha = -1;
  int hsa_conv_w = -1, hsa_conv_b = -1;
  int hsa_head1_w = -1, hsa_head1_b = -1, hsa_head2_w = -1, hsa_head2_b = -1;

  bool has_dfa() const { return dfa_alpha >= 0; }
  bool has_hsa() const { return hsa_conv_w >= 0; }
};

struct ModelLayout {
  int grid = -1;
  int head_in_w = -1, head_in_b = -1;
  std::vector<LayerSlots> layers;
  int head_out_w = -1, head_out_b = -1;
};

struct TrainedModel {
  ArchitectureConfig config;
  std::vector<Param> params;
  ModelLayout layout;

  const Tensor& value(int slot) const { return params.at(static_cast<std::size_t>(slot)).value; }
  Tensor& value(int slot) { return params.at(static_cast<std::size_t>(slot)).value; }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].name == name) return static_cast<int>(i);
    return -1;
  }

  DfaLayerView dfa_view(int l) const {
    const auto& s = layout.layers.at(static_cast<std::size_t>(l));
    static const Tensor empty;
    return {&value(s.conv_w).shape, config.dfa.factorized, s.dfa_bases >= 0 ? &value(s.dfa_bases) : &empty,
            s.dfa_u >= 0 ? &value(s.dfa_u) : &empty, s.dfa_v >= 0 ? &value(s.dfa_v) : &empty,
            &value(s.dfa_alpha)};
  }

  HsaLayerView hsa_view(int l) const {
    const auto& s = layout.layers.at(static_cast<std::size_t>(l));
    return {&value(s.hsa_conv_w),  &value(s.hsa_conv_b),  &value(s.hsa_head1_w),
            &value(s.hsa_head1_b), &value(s.hsa_head2_w), &value(s.hsa_head2_b)};
  }
};

// Temporal positional encoding, interleaved (sin, cos) pairs over J octaves
// of base b evaluated at t/T.
inline std::vector<double> embed(int t, int frames, int freqs, double base) {
  if (t < 0 || t >= frames)
    throw ConfigError("frame index " + std::to_string(t) + " out of range [0," + std::to_string(frames) + ")");
  const double tn = static_cast<double>(t) / frames;
  std::vector<double> e(static_cast<std::size_t>(2 * freqs));
  for (int j = 0; j < freqs; ++j) {
    const double a = std::pow(base, j) * M_PI * tn;
    e[static_cast<std::size_t>(2 * j)] = std::sin(a);
    e[static_cast<std::size_t>(2 * j + 1)] = std::cos(a);
  }
  return e;
}

inline std::vector<double> embed(int t, const ArchitectureConfig& c) {
  return embed(t, c.num_frames, c.embed_freqs, c.embed_base);
}

namespace detail {

inline std::uint64_t name_tag(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

enum class Init { zero, uniform_fan, normal_unit };

inline int add_param(TrainedModel& m, const std::string& name, std::vector<int> shape, Init init, int fan_in,
                     std::uint64_t seed, bool compressible = true) {
  Param p;
  p.name = name;
  p.value = Tensor(std::move(shape));
  p.compressible = compressible;
  Rng rng(mix_seed(seed, name_tag(name)));
  if (init == Init::uniform_fan) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : p.value.data) v = rng.uniform(-bound, bound);
  } else if (init == Init::normal_unit) {
    for (double& v : p.value.data) v = rng.normal();
  }
  m.params.push_back(std::move(p));
  return static_cast<int>(m.params.size()) - 1;
}

}  // namespace detail

// Deterministic initialization. Extra-depth stages and the HSA 3x3 branch
// start at zero so they are identities; HSA heads are not compressible.
inline TrainedModel build_network(const ArchitectureConfig& config, std::uint64_t seed) {
  using detail::add_param;
  using detail::Init;
  config.validate();
  TrainedModel m;
  m.config = config;
  const int c0 = config.base_channels;
  const int e = 2 * config.embed_freqs;
  m.layout.grid = add_param(m, "grid", {c0, config.base_h, config.base_w}, Init::normal_unit, 1, seed);
  m.layout.head_in_w = add_param(m, "head_in.w", {2 * c0, e}, Init::uniform_fan, e, seed);
  m.layout.head_in_b = add_param(m, "head_in.b", {2 * c0}, Init::zero, 1, seed);

  std::vector<DfaLayerShape> dfa_shapes;
  for (int l = 0; l < config.num_layers; ++l) {
    LayerSlots s;
    const std::string pre = "layer" + std::to_string(l);
    const int cin = config.channels_in(l), cout = config.channels_out(l), f = config.factor(l);
    s.conv_w = add_param(m, pre + ".conv.w", {cout * f * f, cin, 3, 3}, Init::uniform_fan, cin * 9, seed);
    s.conv_b = add_param(m, pre + ".conv.b", {cout * f * f}, Init::zero, 1, seed);
    for (int k = 0; k < config.depth(l); ++k) {
      const std::string sp = pre + ".stage" + std::to_string(k);
      s.stage_w.push_back(add_param(m, sp + ".w", {cout, cout, 3, 3}, Init::zero, 1, seed));
      s.stage_b.push_back(add_param(m, sp + ".b", {cout}, Init::zero, 1, seed));
    }
    if (config.dfa_at(l)) dfa_shapes.push_back({l, m.value(s.conv_w).shape});
    if (config.hsa_at(l)) {
      s.hsa_conv_w = add_param(m, pre + ".hsa.conv.w", {cout, cout, 3, 3}, Init::zero, 1, seed);
      s.hsa_conv_b = add_param(m, pre + ".hsa.conv.b", {cout}, Init::zero, 1, seed);
      s.hsa_head1_w = add_param(m, pre + ".hsa.head1.w", {1, cout, 1, 1}, Init::uniform_fan, cout, seed, false);
      s.hsa_head1_b = add_param(m, pre + ".hsa.head1.b", {1}, Init::zero, 1, seed, false);
      s.hsa_head2_w = add_param(m, pre + ".hsa.head2.w", {1, cout, 1, 1}, Init::uniform_fan, cout, seed, false);
      s.hsa_head2_b = add_param(m, pre + ".hsa.head2.b", {1}, Init::zero, 1, seed, false);
    }
    m.layout.layers.push_back(std::move(s));
  }
  const int cl = config.channels_in(config.num_layers);
  m.layout.head_out_w = add_param(m, "head_out.w", {3, cl, 3, 3}, Init::uniform_fan, cl * 9, seed);
  m.layout.head_out_b = add_param(m, "head_out.b", {3}, Init::zero, 1, seed);

  if (!dfa_shapes.empty()) {
    DfaParams dfa = init_dfa(config.dfa, dfa_shapes, config.num_frames, seed);
    for (auto& lp : dfa.layers) {
      auto& s = m.layout.layers[static_cast<std::size_t>(lp.layer)];
      const std::string pre = "layer" + std::to_string(lp.layer) + ".dfa.";
      auto push = [&](const std::string& n, Tensor&& t) {
        m.params.push_back(Param{pre + n, std::move(t), true, std::nullopt});
        return static_cast<int>(m.params.size()) - 1;
      };
      if (lp.factorized) {
        s.dfa_u = push("u", std::move(lp.u));
        s.dfa_v = push("v", std::move(lp.v));
      } else {
        s.dfa_bases = push("bases", std::move(lp.bases));
      }
      s.dfa_alpha = push("alpha", std::move(lp.alpha));
    }
  }
  return m;
}

// Copies every tensor of `from` whose name and shape exist in `to`.
inline void copy_matching_params(const TrainedModel& from, TrainedModel& to) {
  std::unordered_map<std::string, const Param*> index;
  for (const auto& p : from.params) index[p.name] = &p;
  for (auto& p : to.params) {
    auto it = index.find(p.name);
    if (it != index.end() && it->second->value.shape == p.value.shape) p.value = it->second->value;
  }
}

// Rebuilds with a new configuration, keeping trained weights where they
// still fit; new tensors take their fresh initialization.
inline TrainedModel reconfigure(const TrainedModel& m, const ArchitectureConfig& config, std::uint64_t seed) {
  TrainedModel out = build_network(config, seed);
  copy_matching_params(m, out);
  return out;
}

inline std::size_t count_params(const TrainedModel& m, bool compressible_only) {
  std::size_t n = 0;
  for (const auto& p : m.params)
    if (!compressible_only || p.compressible) n += p.value.size();
  return n;
}

// Scalar count of a conv weight of the given shape plus optional bias.
inline std::size_t conv_param_count(int cout, int cin, int k, bool bias) {
  return static_cast<std::size_t>(cout) * cin * k * k + (bias ? cout : 0);
}

// ---------------------------------------------------------------------------
// Forward pass with the intermediates needed for backpropagation.

struct LayerTrace {
  FeatureMap input;
  Tensor effective_weight;  // only when DFA is attached
  FeatureMap pre_act;       // shuffled conv output
  std::vector<FeatureMap> stage_in;
  std::vector<FeatureMap> stage_act;
  FeatureMap hsa_in;
  HsaOutputs hsa;
  FeatureMap output;
};

struct ForwardTrace {
  int t = 0;
  std::vector<double> embedding;
  std::vector<double> modulation;
  FeatureMap x0;
  std::vector<LayerTrace> layers;
  FeatureMap logits;
  FeatureMap out;
};

inline ForwardTrace forward_trace(const TrainedModel& m, int t, bool with_heads = true) {
  const auto& cfg = m.config;
  ForwardTrace tr;
  tr.t = t;
  tr.embedding = embed(t, cfg);
  const int c0 = cfg.base_channels;
  const int e = static_cast<int>(tr.embedding.size());

  const Tensor& win = m.value(m.layout.head_in_w);
  const Tensor& bin = m.value(m.layout.head_in_b);
  tr.modulation.assign(static_cast<std::size_t>(2 * c0), 0.0);
  for (int i = 0; i < 2 * c0; ++i) {
    double s = bin[static_cast<std::size_t>(i)];
    for (int j = 0; j < e; ++j) s += win[static_cast<std::size_t>(i) * e + j] * tr.embedding[static_cast<std::size_t>(j)];
    tr.modulation[static_cast<std::size_t>(i)] = s;
  }
  const Tensor& grid = m.value(m.layout.grid);
  FeatureMap x(c0, cfg.base_h, cfg.base_w);
  for (int c = 0; c < c0; ++c) {
    const double scale = 1.0 + tr.modulation[static_cast<std::size_t>(c)];
    const double shift = tr.modulation[static_cast<std::size_t>(c0 + c)];
    const double* g = grid.ptr() + x.plane() * c;
    double* dst = x.channel(c);
    for (std::size_t i = 0; i < x.plane(); ++i) dst[i] = g[i] * scale + shift;
  }
  tr.x0 = x;

  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& s = m.layout.layers[static_cast<std::size_t>(l)];
    LayerTrace lt;
    lt.input = std::move(x);
    const int f = cfg.factor(l);
    const Tensor& w = m.value(s.conv_w);
    const double* wptr = w.ptr();
    if (s.has_dfa()) {
      lt.effective_weight = compute_delta(m.dfa_view(l), t);
      for (std::size_t i = 0; i < w.size(); ++i) lt.effective_weight.data[i] += w.data[i];
      wptr = lt.effective_weight.ptr();
    }
    FeatureMap a = ops::conv2d(lt.input, wptr, m.value(s.conv_b).ptr(), w.shape[0], 3);
    lt.pre_act = ops::pixel_shuffle(a, f);
    FeatureMap z = ops::apply_gelu(lt.pre_act);
    for (std::size_t k = 0; k < s.stage_w.size(); ++k) {
      const Tensor& sw = m.value(s.stage_w[k]);
      lt.stage_in.push_back(z);
      lt.stage_act.push_back(ops::apply_gelu(z));
      FeatureMap r = ops::conv2d(lt.stage_act.back(), sw.ptr(), m.value(s.stage_b[k]).ptr(), sw.shape[0], 3);
      ops::add_inplace(z, r);
    }
    if (s.has_hsa()) {
      lt.hsa_in = z;
      lt.hsa = hsa_forward(m.hsa_view(l), z, with_heads);
      z = lt.hsa.fused;
    }
    lt.output = z;
    x = std::move(z);
    tr.layers.push_back(std::move(lt));
  }
  const Tensor& wo = m.value(m.layout.head_out_w);
  tr.logits = ops::conv2d(x, wo.ptr(), m.value(m.layout.head_out_b).ptr(), 3, 3);
  tr.out = tr.logits;
  for (double& v : tr.out.data) v = ops::sigmoid(v);
  return tr;
}

// Reconstructed frame t (3 x H x W, values in (0, 1)). HSA heads are not
// evaluated.
inline FeatureMap forward(const TrainedModel& m, int t) {
  ForwardTrace tr = forward_trace(m, t, false);
  return std::move(tr.out);
}

using Gradients = std::vector<Tensor>;

inline Gradients zero_gradients(const TrainedModel& m) {
  Gradients g;
  g.reserve(m.params.size());
  for (const auto& p : m.params) g.emplace_back(p.value.shape);
  return g;
}

// Upstream gradients for one frame. hsa_pred1/2 are indexed by layer; empty
// maps mean no supervision at that layer.
struct OutputGradients {
  FeatureMap d_out;
  std::vector<FeatureMap> hsa_pred1;
  std::vector<FeatureMap> hsa_pred2;
};

// Accumulates d(loss)/d(param) into g.
inline void backward(const TrainedModel& m, const ForwardTrace& tr, const OutputGradients& og, Gradients& g) {
  const auto& cfg = m.config;
  FeatureMap dlogits = og.d_out;
  for (std::size_t i = 0; i < dlogits.data.size(); ++i) {
    const double y = tr.out.data[i];
    dlogits.data[i] *= y * (1.0 - y);
  }
  const FeatureMap& last = tr.layers.back().output;
  FeatureMap dx;
  ops::conv2d_backward(last, m.value(m.layout.head_out_w).ptr(), 3, 3, dlogits,
                       g[static_cast<std::size_t>(m.layout.head_out_w)].ptr(),
                       g[static_cast<std::size_t>(m.layout.head_out_b)].ptr(), &dx);

  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const auto& s = m.layout.layers[static_cast<std::size_t>(l)];
    const auto& lt = tr.layers[static_cast<std::size_t>(l)];
    FeatureMap dz = std::move(dx);
    if (s.has_hsa()) {
      static const FeatureMap none;
      const auto li = static_cast<std::size_t>(l);
      const FeatureMap& dp1 = li < og.hsa_pred1.size() ? og.hsa_pred1[li] : none;
      const FeatureMap& dp2 = li < og.hsa_pred2.size() ? og.hsa_pred2[li] : none;
      HsaLayerGrad hg{&g[static_cast<std::size_t>(s.hsa_conv_w)],  &g[static_cast<std::size_t>(s.hsa_conv_b)],
                      &g[static_cast<std::size_t>(s.hsa_head1_w)], &g[static_cast<std::size_t>(s.hsa_head1_b)],
                      &g[static_cast<std::size_t>(s.hsa_head2_w)], &g[static_cast<std::size_t>(s.hsa_head2_b)]};
      dz = hsa_backward(m.hsa_view(l), lt.hsa_in, lt.hsa, dz, dp1, dp2, hg);
    }
    for (int k = static_cast<int>(s.stage_w.size()) - 1; k >= 0; --k) {
      const auto ku = static_cast<std::size_t>(k);
      const Tensor& sw = m.value(s.stage_w[ku]);
      FeatureMap dact;
      ops::conv2d_backward(lt.stage_act[ku], sw.ptr(), sw.shape[0], 3, dz,
                           g[static_cast<std::size_t>(s.stage_w[ku])].ptr(),
                           g[static_cast<std::size_t>(s.stage_b[ku])].ptr(), &dact);
      ops::add_inplace(dz, ops::gelu_backward(lt.stage_in[ku], dact));
    }
    FeatureMap dpre = ops::gelu_backward(lt.pre_act, dz);
    FeatureMap da = ops::pixel_unshuffle(dpre, cfg.factor(l));
    const Tensor& w = m.value(s.conv_w);
    Tensor& gw = g[static_cast<std::size_t>(s.conv_w)];
    if (s.has_dfa()) {
      Tensor dweff(w.shape);
      ops::conv2d_backward(lt.input, lt.effective_weight.ptr(), w.shape[0], 3, da, dweff.ptr(),
                           g[static_cast<std::size_t>(s.conv_b)].ptr(), &dx);
      for (std::size_t i = 0; i < gw.size(); ++i) gw.data[i] += dweff.data[i];
      static Tensor unused;
      DfaLayerGrad dg;
      dg.bases = s.dfa_bases >= 0 ? &g[static_cast<std::size_t>(s.dfa_bases)] : &unused;
      dg.u = s.dfa_u >= 0 ? &g[static_cast<std::size_t>(s.dfa_u)] : &unused;
      dg.v = s.dfa_v >= 0 ? &g[static_cast<std::size_t>(s.dfa_v)] : &unused;
      dg.alpha = &g[static_cast<std::size_t>(s.dfa_alpha)];
      dfa_backward(m.dfa_view(l), tr.t, dweff.ptr(), dg);
    } else {
      ops::conv2d_backward(lt.input, w.ptr(), w.shape[0], 3, da, gw.ptr(),
                           g[static_cast<std::size_t>(s.conv_b)].ptr(), &dx);
    }
  }

  // x0 = grid * (1 + scale) + shift, (scale, shift) = W_in e + b_in
  const int c0 = cfg.base_channels;
  const int e = static_cast<int>(tr.embedding.size());
  const Tensor& grid = m.value(m.layout.grid);
  Tensor& ggrid = g[static_cast<std::size_t>(m.layout.grid)];
  Tensor& gwin = g[static_cast<std::size_t>(m.layout.head_in_w)];
  Tensor& gbin = g[static_cast<std::size_t>(m.layout.head_in_b)];
  std::vector<double> dmod(static_cast<std::size_t>(2 * c0), 0.0);
  for (int c = 0; c < c0; ++c) {
    const double scale = 1.0 + tr.modulation[static_cast<std::size_t>(c)];
    const double* gx = dx.channel(c);
    const double* gr = grid.ptr() + dx.plane() * c;
    double* gg = ggrid.ptr() + dx.plane() * c;
    double ds = 0.0, dsh = 0.0;
    for (std::size_t i = 0; i < dx.plane(); ++i) {
      gg[i] += gx[i] * scale;
      ds += gx[i] * gr[i];
      dsh += gx[i];
    }
    dmod[static_cast<std::size_t>(c)] = ds;
    dmod[static_cast<std::size_t>(c0 + c)] = dsh;
  }
  for (int i = 0; i < 2 * c0; ++i) {
    gbin[static_cast<std::size_t>(i)] += dmod[static_cast<std::size_t>(i)];
    for (int j = 0; j < e; ++j)
      gwin[static_cast<std::size_t>(i) * e + j] += dmod[static_cast<std::size_t>(i)] * tr.embedding[static_cast<std::size_t>(j)];
  }
}

}  // namespace canerv
