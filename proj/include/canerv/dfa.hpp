#pragma once

#include <cmath>
#include <vector>

#include "canerv/common.hpp"
#include "canerv/config.hpp"

namespace canerv {

// Per-frame weight deltas for one adapted layer:
//   delta_t = sum_r alpha[t, r] * basis_r
// basis_r is either a full tensor shaped like the layer weight, or (in
// factorized mode) the outer product u_r v_r^T over the weight viewed as
// [cout, cin*k*k].
struct DfaLayerParams {
  int layer = 0;
  std::vector<int> weight_shape;  // [cout, cin, k, k]
  bool factorized = false;
  Tensor bases;  // [R, cout, cin, k, k]   (full mode)
  Tensor u;      // [R, cout]              (factorized mode)
  Tensor v;      // [R, cin*k*k]           (factorized mode)
  Tensor alpha;  // [T, R]

  int rank() const { return alpha.shape.at(1); }
  int frames() const { return alpha.shape.at(0); }
  std::size_t weight_size() const { return Tensor::count(weight_shape); }

  std::size_t scalar_count() const {
    return bases.size() + u.size() + v.size() + alpha.size();
  }
};

struct DfaParams {
  std::vector<DfaLayerParams> layers;

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.scalar_count();
    return n;
  }
};

struct DfaLayerShape {
  int layer;
  std::vector<int> weight_shape;
};

// Bases start small and random (entries of std 1e-3; factorized factors get
// std sqrt(1e-3) each), coefficients at zero, so the initial delta vanishes
// for every frame.
constexpr double kBasisStd = 1e-3;

inline DfaParams init_dfa(const DfaConfig& cfg, const std::vector<DfaLayerShape>& shapes, int frames,
                          std::uint64_t seed) {
  if (cfg.rank < 1) throw ConfigError("DFA rank must be >= 1");
  if (frames < 1) throw ConfigError("DFA needs at least one frame");
  DfaParams p;
  for (const auto& s : shapes) {
    Rng rng(mix_seed(seed, 0xDFA0 + static_cast<std::uint64_t>(s.layer)));
    DfaLayerParams lp;
    lp.layer = s.layer;
    lp.weight_shape = s.weight_shape;
    lp.factorized = cfg.factorized;
    const int r = cfg.rank;
    const int cout = s.weight_shape.at(0);
    const int fan = static_cast<int>(Tensor::count(s.weight_shape)) / cout;
    if (cfg.factorized) {
      lp.u = Tensor({r, cout});
      lp.v = Tensor({r, fan});
      const double sd = std::sqrt(kBasisStd);
      for (double& x : lp.u.data) x = sd * rng.normal();
      for (double& x : lp.v.data) x = sd * rng.normal();
    } else {
      std::vector<int> shape{r};
      shape.insert(shape.end(), s.weight_shape.begin(), s.weight_shape.end());
      lp.bases = Tensor(shape);
      for (double& x : lp.bases.data) x = kBasisStd * rng.normal();
    }
    lp.alpha = Tensor({frames, r});
    p.layers.push_back(std::move(lp));
  }
  return p;
}

// Reads bases and coefficients from explicit tensors so that the caller can
// substitute fake-quantized copies.
struct DfaLayerView {
  const std::vector<int>* weight_shape;
  bool factorized;
  const Tensor* bases;
  const Tensor* u;
  const Tensor* v;
  const Tensor* alpha;

  static DfaLayerView of(const DfaLayerParams& p) {
    return {&p.weight_shape, p.factorized, &p.bases, &p.u, &p.v, &p.alpha};
  }
  int rank() const { return alpha->shape.at(1); }
  int frames() const { return alpha->shape.at(0); }
};

inline Tensor compute_delta(const DfaLayerView& p, int t) {
  if (t < 0 || t >= p.frames())
    throw ConfigError("DFA coefficients missing for frame " + std::to_string(t));
  Tensor delta(*p.weight_shape);
  const std::size_t n = delta.size();
  const int r_count = p.rank();
  const double* a = p.alpha->ptr() + static_cast<std::size_t>(t) * r_count;
  if (!p.factorized) {
    for (int r = 0; r < r_count; ++r) {
      if (a[r] == 0.0) continue;
      const double* b = p.bases->ptr() + n * r;
      for (std::size_t i = 0; i < n; ++i) delta.data[i] += a[r] * b[i];
    }
    return delta;
  }
  const int cout = (*p.weight_shape)[0];
  const std::size_t fan = n / cout;
  for (int r = 0; r < r_count; ++r) {
    if (a[r] == 0.0) continue;
    const double* ur = p.u->ptr() + static_cast<std::size_t>(r) * cout;
    const double* vr = p.v->ptr() + fan * r;
    for (int o = 0; o < cout; ++o) {
      const double s = a[r] * ur[o];
      double* row = delta.ptr() + fan * o;
      for (std::size_t i = 0; i < fan; ++i) row[i] += s * vr[i];
    }
  }
  return delta;
}

inline Tensor compute_delta(const DfaLayerParams& p, int t) {
  return compute_delta(DfaLayerView::of(p), t);
}

// Gradient buffers shaped like the view's tensors (unused ones may be empty).
struct DfaLayerGrad {
  Tensor* bases = nullptr;
  Tensor* u = nullptr;
  Tensor* v = nullptr;
  Tensor* alpha = nullptr;
};

// Chain rule through compute_delta for frame t given d(loss)/d(delta).
inline void dfa_backward(const DfaLayerView& p, int t, const double* ddelta, DfaLayerGrad g) {
  const std::size_t n = Tensor::count(*p.weight_shape);
  const int r_count = p.rank();
  const double* a = p.alpha->ptr() + static_cast<std::size_t>(t) * r_count;
  double* ga = g.alpha->ptr() + static_cast<std::size_t>(t) * r_count;
  if (!p.factorized) {
    for (int r = 0; r < r_count; ++r) {
      const double* b = p.bases->ptr() + n * r;
      double* gb = g.bases->ptr() + n * r;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        dot += b[i] * ddelta[i];
        gb[i] += a[r] * ddelta[i];
      }
      ga[r] += dot;
    }
    return;
  }
  const int cout = (*p.weight_shape)[0];
  const std::size_t fan = n / cout;
  for (int r = 0; r < r_count; ++r) {
    const double* ur = p.u->ptr() + static_cast<std::size_t>(r) * cout;
    const double* vr = p.v->ptr() + fan * r;
    double* gu = g.u->ptr() + static_cast<std::size_t>(r) * cout;
    double* gv = g.v->ptr() + fan * r;
    double dot = 0.0;
    for (int o = 0; o < cout; ++o) {
      const double* row = ddelta + fan * o;
      double rv = 0.0;
      for (std::size_t i = 0; i < fan; ++i) {
        rv += row[i] * vr[i];
        gv[i] += a[r] * ur[o] * row[i];
      }
      gu[o] += a[r] * rv;
      dot += ur[o] * rv;
    }
    ga[r] += dot;
  }
}

// Rate of the DFA side information at a fixed bit depth.
inline double dfa_rate_contribution(const DfaParams& p, int bits_per_value) {
  return static_cast<double>(p.scalar_count()) * bits_per_value;
}

}  // namespace canerv
