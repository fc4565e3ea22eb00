#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "canerv/canerv.hpp"

namespace canerv::testing {

// Integer hash shared with the Python oracles (tests/oracles/fixtures.py).
inline std::uint64_t hash64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline double hash_uniform(std::uint64_t seed, std::uint64_t i) {
  return static_cast<double>(hash64(seed * 1000003ULL + i) >> 11) * 0x1.0p-53;
}

inline double hash_normal(std::uint64_t seed, std::uint64_t i) {
  const double u1 = hash_uniform(seed, 2 * i) + 0x1.0p-54;
  const double u2 = hash_uniform(seed, 2 * i + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Smooth two-wave pattern in [0.1, 0.9].
inline FeatureMap fixture_frame(int c, int h, int w) {
  FeatureMap f(c, h, w);
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        f.at(k, y, x) = 0.5 + 0.25 * std::sin(0.21 * x + 0.13 * y + k) + 0.15 * std::cos(0.17 * y - 0.11 * x + 2.0 * k);
  return f;
}

inline FeatureMap with_noise(const FeatureMap& f, double sigma, std::uint64_t seed) {
  FeatureMap g = f;
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += sigma * hash_normal(seed, i);
  return g;
}

inline void randomize(TrainedModel& m, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (auto& p : m.params)
    for (double& v : p.value.data) v = scale * rng.normal();
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double n = std::sqrt(std::max(na, nb));
  return n == 0.0 ? 0.0 : std::sqrt(d) / n;
}

// Central differences of f with respect to every entry of x.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, std::vector<double>& x,
                                            double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("canerv_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& leaf = "") const { return leaf.empty() ? path_.string() : (path_ / leaf).string(); }

 private:
  std::filesystem::path path_;
};

// 16x16 output: base 4x4, two x2 layers, four channels throughout.
inline ArchitectureConfig tiny_architecture(int frames = 3) {
  ArchitectureConfig c;
  c.base_h = c.base_w = 4;
  c.num_layers = 2;
  c.base_channels = 4;
  c.min_channels = 4;
  c.embed_freqs = 2;
  c.num_frames = frames;
  return c;
}

inline VideoSequence tiny_sequence(int frames = 3, int size = 16) {
  SyntheticSpec s;
  s.kind = SyntheticKind::moving_square;
  s.frames = frames;
  s.height = s.width = size;
  s.magnitude = 2.0;
  return generate_synthetic(s);
}

struct Checked {
  std::string name;
  double rel;
};

// Compares backward() against central differences of total_loss for every
// tensor whose name contains one of `filters` (all tensors when empty).
inline std::vector<Checked> check_model(TrainedModel& m, const VideoSequence& seq, const TrainConfig& tcfg,
                                 const std::vector<std::string>& filters) {
  const auto targets = make_targets(seq, m.config);
  auto loss_at = [&](int t) {
    ForwardTrace tr = forward_trace(m, t, m.config.hsa.enabled);
    return total_loss(tr.out, seq.frames[static_cast<std::size_t>(t)], &tr,
                      targets.empty() ? nullptr : &targets[static_cast<std::size_t>(t)], m.config, tcfg, false)
        .report.total;
  };
  std::vector<Checked> out;
  for (int t = 0; t < m.config.num_frames; ++t) {
    Gradients g = zero_gradients(m);
    ForwardTrace tr = forward_trace(m, t, m.config.hsa.enabled);
    LossWithGrad lg = total_loss(tr.out, seq.frames[static_cast<std::size_t>(t)], &tr,
                                 targets.empty() ? nullptr : &targets[static_cast<std::size_t>(t)], m.config, tcfg);
    backward(m, tr, lg.grads, g);
    for (std::size_t k = 0; k < m.params.size(); ++k) {
      auto& p = m.params[k];
      bool selected = filters.empty();
      for (const auto& f : filters) selected = selected || p.name.find(f) != std::string::npos;
      if (!selected) continue;
      const auto num = numeric_gradient([&] { return loss_at(t); }, p.value.data);
      out.push_back({p.name + "@t" + std::to_string(t), relative_error(g[k].data, num)});
    }
  }
  return out;
}

}  // namespace canerv::testing
