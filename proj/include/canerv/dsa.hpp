#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "canerv/common.hpp"
#include "canerv/config.hpp"
#include "canerv/metrics.hpp"
#include "canerv/network.hpp"
#include "canerv/trainer.hpp"
#include "canerv/video_io.hpp"

namespace canerv {

constexpr int kMaxExtraDepth = 4;
constexpr int kSearchBitsPerParam = 6;

struct RDLoss {
  double lambda = 0.0;
  double distortion = 0.0;
  double rate_bits = 0.0;
  double value = 0.0;
};

inline RDLoss rd_loss(double distortion, double rate_bits, double lambda) {
  if (!std::isfinite(distortion) || !std::isfinite(rate_bits) || !std::isfinite(lambda))
    throw ConfigError("rd_loss: inputs must be finite");
  if (distortion < 0 || rate_bits < 0 || lambda < 0) throw ConfigError("rd_loss: inputs must be nonnegative");
  return {lambda, distortion, rate_bits, lambda * distortion + rate_bits};
}

// Stand-in for a candidate whose training diverged.
inline RDLoss diverged_loss(double lambda) {
  const double inf = std::numeric_limits<double>::infinity();
  return {lambda, inf, inf, inf};
}

// Memoized depth -> RDLoss. Each depth is computed at most once, also when
// queried from several threads.
class DepthOracle {
 public:
  using Fn = std::function<RDLoss(int)>;
  explicit DepthOracle(Fn fn) : fn_(std::move(fn)) {}

  RDLoss operator()(int depth) {
    if (depth < 0 || depth > kMaxExtraDepth) throw ConfigError("depth must be in {0..4}");
    const auto d = static_cast<std::size_t>(depth);
    std::call_once(once_[d], [&] {
      RDLoss v = fn_(depth);
      std::lock_guard<std::mutex> lock(mu_);
      cache_.emplace(depth, v);
    });
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.at(depth);
  }

  int evaluations() const {
    std::lock_guard<std::mutex> lock(mu_);
    return static_cast<int>(cache_.size());
  }
  std::map<int, RDLoss> evaluated() const {
    std::lock_guard<std::mutex> lock(mu_);
    return cache_;
  }

 private:
  Fn fn_;
  std::array<std::once_flag, kMaxExtraDepth + 1> once_;
  mutable std::mutex mu_;
  std::map<int, RDLoss> cache_;
};

// Five-way binary search over {0..4}. Returns the argmin of a unimodal
// profile unless the minimum is at depth 1 with L0 >= L2 (then 2).
inline int binary_search_depth(DepthOracle& oracle) {
  const double l0 = oracle(0).value;
  const double l2 = oracle(2).value;
  if (l0 < l2) {
    const double l1 = oracle(1).value;
    return l0 < l1 ? 0 : 1;
  }
  const double l3 = oracle(3).value;
  if (l2 < l3) return 2;
  const double l4 = oracle(4).value;
  return l3 > l4 ? 4 : 3;
}

// Among the evaluated depths, the smallest one whose loss equals the
// selected depth's loss exactly.
inline int normalize_tie(const DepthOracle& oracle, int chosen) {
  const auto ev = oracle.evaluated();
  const double v = ev.at(chosen).value;
  for (const auto& [d, l] : ev)
    if (d < chosen && l.value == v) return d;
  return chosen;
}

inline double search_rate_bits(const TrainedModel& m) {
  return static_cast<double>(kSearchBitsPerParam) * static_cast<double>(count_params(m, true));
}

inline double distortion_of(const TrainedModel& m, const VideoSequence& seq) {
  return mse(reconstruct(m), seq);
}

struct CandidateResult {
  RDLoss loss;
  std::optional<TrainedModel> model;  // empty when training diverged
};

inline ArchitectureConfig with_depth(ArchitectureConfig c, int layer, int depth) {
  if (c.extra_depths.empty()) c.extra_depths.assign(static_cast<std::size_t>(c.num_layers), 0);
  c.extra_depths.at(static_cast<std::size_t>(layer)) = depth;
  return c;
}

inline ArchitectureConfig with_uniform_depth(ArchitectureConfig c, int depth) {
  c.extra_depths.assign(static_cast<std::size_t>(c.num_layers), depth);
  return c;
}

// Trains `candidate_config` warm-started from `warm` (shared tensors copied,
// new depth stages zero) for `budget` epochs.
inline CandidateResult evaluate_candidate_from(const TrainedModel& warm, const ArchitectureConfig& candidate_config,
                                               const VideoSequence& seq, int budget, double lambda,
                                               const TrainConfig& tcfg) {
  CandidateResult r;
  try {
    TrainOptions opt;
    opt.epochs = budget;
    opt.lr = tcfg.lr;
    TrainResult tr = fit(reconfigure(warm, candidate_config, tcfg.seed), seq, tcfg, opt);
    const double d = distortion_of(tr.model, seq);
    if (!std::isfinite(d)) return {diverged_loss(lambda), std::nullopt};
    r.loss = rd_loss(d, search_rate_bits(tr.model), lambda);
    r.model = std::move(tr.model);
  } catch (const NumericalError&) {
    return {diverged_loss(lambda), std::nullopt};
  }
  return r;
}

inline TrainedModel warm_model(const VideoSequence& seq, const ArchitectureConfig& config, int budget,
                               const TrainConfig& tcfg) {
  TrainOptions opt;
  opt.epochs = budget;
  opt.lr = tcfg.lr;
  return fit(build_network(config, tcfg.seed), seq, tcfg, opt).model;
}

// Standalone candidate evaluation: warm up `config` for `search_budget`
// epochs, set layer `layer_index` to `depth`, train another budget.
inline RDLoss evaluate_depth_candidate(const VideoSequence& seq, const ArchitectureConfig& config, int layer_index,
                                       int depth, int search_budget, double lambda, std::uint64_t seed) {
  if (layer_index < 0 || layer_index >= config.num_layers) throw ConfigError("layer index out of range");
  if (depth < 0 || depth > kMaxExtraDepth) throw ConfigError("depth must be in {0..4}");
  if (search_budget < 0) throw ConfigError("search budget must be >= 0");
  TrainConfig tcfg;
  tcfg.seed = seed;
  const TrainedModel warm = warm_model(seq, config, search_budget, tcfg);
  return evaluate_candidate_from(warm, with_depth(config, layer_index, depth), seq, search_budget, lambda, tcfg).loss;
}

struct SearchStep {
  int layer = -1;  // -1 in single-depth mode
  std::map<int, RDLoss> evaluated;
  int chosen = 0;
};

struct SearchResult {
  ArchitectureConfig config;
  std::vector<SearchStep> trace;
  int evaluations = 0;
};

struct SearchOptions {
  double lambda = 0.0;
  int search_budget = 0;
  bool single_depth = false;
  TrainConfig train;
};

// Default budget: a tenth of the full training epochs.
inline int default_search_budget(int epochs) { return std::max(1, epochs / 10); }

// Greedy search driven by an arbitrary candidate evaluator. `evaluate`
// receives (layer or -1, depth, current config) and returns the RD loss.
using CandidateFn = std::function<RDLoss(int layer, int depth, const ArchitectureConfig& current)>;

inline SearchResult optimize_architecture_with(const ArchitectureConfig& base, bool single_depth,
                                               const CandidateFn& evaluate,
                                               const std::function<void(int layer, int depth)>& on_choice = {}) {
  base.validate();
  SearchResult res;
  res.config = base;
  if (res.config.extra_depths.empty()) res.config.extra_depths.assign(static_cast<std::size_t>(base.num_layers), 0);
  std::vector<int> layers;
  if (single_depth)
    layers.push_back(-1);
  else
    for (int l = base.num_layers - 1; l >= 0; --l) layers.push_back(l);
  for (int layer : layers) {
    const ArchitectureConfig current = res.config;
    DepthOracle oracle([&](int d) { return evaluate(layer, d, current); });
    const int chosen = normalize_tie(oracle, binary_search_depth(oracle));
    res.config = layer < 0 ? with_uniform_depth(res.config, chosen) : with_depth(res.config, layer, chosen);
    res.trace.push_back({layer, oracle.evaluated(), chosen});
    res.evaluations += oracle.evaluations();
    if (on_choice) on_choice(layer, chosen);
  }
  return res;
}

inline SearchResult optimize_architecture(const VideoSequence& seq, const ArchitectureConfig& base,
                                          const SearchOptions& opt) {
  if (opt.search_budget < 0) throw ConfigError("search budget must be >= 0");
  base.check_resolution(seq.height(), seq.width());
  TrainedModel warm = warm_model(seq, base, opt.search_budget, opt.train);
  std::map<std::pair<int, int>, TrainedModel> trained;
  auto evaluate = [&](int layer, int depth, const ArchitectureConfig& current) {
    const ArchitectureConfig cand = layer < 0 ? with_uniform_depth(current, depth) : with_depth(current, layer, depth);
    CandidateResult c = evaluate_candidate_from(warm, cand, seq, opt.search_budget, opt.lambda, opt.train);
    if (c.model) trained.insert_or_assign({layer, depth}, std::move(*c.model));
    return c.loss;
  };
  auto on_choice = [&](int layer, int depth) {
    if (auto it = trained.find({layer, depth}); it != trained.end()) warm = std::move(it->second);
    trained.clear();
  };
  return optimize_architecture_with(base, opt.single_depth, evaluate, on_choice);
}

inline ArchitectureConfig optimize_architecture(const VideoSequence& seq, const ArchitectureConfig& base, double lambda,
                                                int search_budget, std::uint64_t seed) {
  SearchOptions opt;
  opt.lambda = lambda;
  opt.search_budget = search_budget;
  opt.train.seed = seed;
  return optimize_architecture(seq, base, opt).config;
}

}  // namespace canerv
