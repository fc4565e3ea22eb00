#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "canerv/common.hpp"

namespace canerv {

struct DfaConfig {
  bool enabled = false;
  int rank = 3;
  std::vector<int> layers;  // empty = last layer
  bool factorized = false;  // rank-1 bases u v^T instead of full tensors
};

struct HsaConfig {
  bool enabled = false;
  std::vector<int> layers;  // empty = last layer
  double w1 = 0.1;
  double w2 = 0.1;
  double canny_low = 0.1;
  double canny_high = 0.2;
};

struct ArchitectureConfig {
  int base_h = 4;
  int base_w = 4;
  int base_channels = 32;
  int min_channels = 8;
  int num_layers = 4;
  std::vector<int> upsample;      // per layer; empty = all 2
  std::vector<int> extra_depths;  // per layer, each in {0..4}; empty = all 0
  int embed_freqs = 8;
  double embed_base = 1.25;
  int num_frames = 8;
  DfaConfig dfa;
  HsaConfig hsa;

  int factor(int l) const { return upsample.empty() ? 2 : upsample.at(static_cast<std::size_t>(l)); }
  int depth(int l) const {
    return extra_depths.empty() ? 0 : extra_depths.at(static_cast<std::size_t>(l));
  }

  // Channel count entering layer l (l = num_layers gives the final width).
  int channels_in(int l) const {
    int c = base_channels;
    for (int i = 0; i < l; ++i) c = std::max(min_channels, c / 2);
    return c;
  }
  int channels_out(int l) const { return channels_in(l + 1); }

  int out_height() const {
    int h = base_h;
    for (int l = 0; l < num_layers; ++l) h *= factor(l);
    return h;
  }
  int out_width() const {
    int w = base_w;
    for (int l = 0; l < num_layers; ++l) w *= factor(l);
    return w;
  }
  // Spatial size of layer l's output.
  int layer_height(int l) const {
    int h = base_h;
    for (int i = 0; i <= l; ++i) h *= factor(i);
    return h;
  }
  int layer_width(int l) const {
    int w = base_w;
    for (int i = 0; i <= l; ++i) w *= factor(i);
    return w;
  }

  std::vector<int> dfa_layers() const {
    if (!dfa.enabled) return {};
    return dfa.layers.empty() ? std::vector<int>{num_layers - 1} : dfa.layers;
  }
  std::vector<int> hsa_layers() const {
    if (!hsa.enabled) return {};
    return hsa.layers.empty() ? std::vector<int>{num_layers - 1} : hsa.layers;
  }
  bool hsa_at(int l) const {
    auto v = hsa_layers();
    return std::find(v.begin(), v.end(), l) != v.end();
  }
  bool dfa_at(int l) const {
    auto v = dfa_layers();
    return std::find(v.begin(), v.end(), l) != v.end();
  }

  void validate() const {
    if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
    if (base_h < 1 || base_w < 1) throw ConfigError("base grid must be positive");
    if (base_channels < 1 || min_channels < 1) throw ConfigError("channel counts must be positive");
    if (embed_freqs < 1) throw ConfigError("embed_freqs must be >= 1");
    if (num_frames < 1) throw ConfigError("num_frames must be >= 1");
    if (!upsample.empty() && static_cast<int>(upsample.size()) != num_layers)
      throw ConfigError("upsample needs one entry per layer");
    for (int f : upsample)
      if (f < 1) throw ConfigError("upsample factors must be >= 1");
    if (!extra_depths.empty() && static_cast<int>(extra_depths.size()) != num_layers)
      throw ConfigError("extra_depths needs one entry per layer");
    for (int d : extra_depths)
      if (d < 0 || d > 4) throw ConfigError("extra depth must be in {0,1,2,3,4}");
    if (dfa.enabled && dfa.rank < 1) throw ConfigError("DFA rank must be >= 1");
    for (int l : dfa_layers())
      if (l < 0 || l >= num_layers) throw ConfigError("DFA layer out of range");
    for (int l : hsa_layers())
      if (l < 0 || l >= num_layers) throw ConfigError("HSA layer out of range");
    if (hsa.canny_low < 0 || hsa.canny_low > hsa.canny_high)
      throw ConfigError("Canny thresholds must satisfy 0 <= low <= high");
  }

  // Throws unless the network reaches exactly H x W.
  void check_resolution(int height, int width) const {
    if (out_height() != height || out_width() != width)
      throw ConfigError("architecture produces " + std::to_string(out_height()) + "x" +
                        std::to_string(out_width()) + " but the sequence is " +
                        std::to_string(height) + "x" + std::to_string(width));
  }
};

// Base grid for a target resolution given num_layers and uniform x2 upsampling.
inline ArchitectureConfig default_architecture(int height, int width, int frames, int num_layers = 4) {
  ArchitectureConfig c;
  c.num_layers = num_layers;
  const int f = 1 << num_layers;
  if (height % f != 0 || width % f != 0)
    throw ConfigError("resolution " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by the upsampling factor " + std::to_string(f));
  c.base_h = height / f;
  c.base_w = width / f;
  c.num_frames = frames;
  return c;
}

struct TrainConfig {
  int epochs = 300;
  double lr = 2e-3;
  double loss_alpha = 0.7;
  int qat_epochs = 30;
  int qat_bits = 6;
  double qat_lr_scale = 0.1;
  std::uint64_t seed = 0;
  int batch = 1;

  void validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (qat_epochs < 0) throw ConfigError("qat_epochs must be >= 0");
    if (loss_alpha < 0.0 || loss_alpha > 1.0) throw ConfigError("loss_alpha must be in [0,1]");
    if (qat_bits < 2 || qat_bits > 16) throw ConfigError("qat_bits must be in [2,16]");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  }
};

// ---------------------------------------------------------------------------
// key=value text form. Lines starting with '#' are comments.

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

inline std::vector<int> parse_ints(const std::string& key, const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      std::size_t pos = 0;
      out.push_back(std::stoi(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad integer list for " + key + ": " + s);
    }
  }
  return out;
}

inline int parse_int(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": " + s);
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad unsigned integer for " + key + ": " + s);
  }
}

inline double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": " + s);
  }
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "off" || s == "no") return false;
  throw ConfigError("bad boolean for " + key + ": " + s);
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  for (int prec = 1; prec < 17; ++prec) {
    char tmp[64];
    std::snprintf(tmp, sizeof tmp, "%.*g", prec, v);
    if (std::strtod(tmp, nullptr) == v) return tmp;
  }
  return buf;
}

}  // namespace detail

inline KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

inline KeyValues to_key_values(const ArchitectureConfig& c) {
  using detail::format_double;
  using detail::join_ints;
  KeyValues kv;
  kv["arch.base_h"] = std::to_string(c.base_h);
  kv["arch.base_w"] = std::to_string(c.base_w);
  kv["arch.base_channels"] = std::to_string(c.base_channels);
  kv["arch.min_channels"] = std::to_string(c.min_channels);
  kv["arch.num_layers"] = std::to_string(c.num_layers);
  kv["arch.upsample"] = join_ints(c.upsample);
  kv["arch.extra_depths"] = join_ints(c.extra_depths);
  kv["arch.embed_freqs"] = std::to_string(c.embed_freqs);
  kv["arch.embed_base"] = format_double(c.embed_base);
  kv["arch.num_frames"] = std::to_string(c.num_frames);
  kv["dfa.enabled"] = c.dfa.enabled ? "1" : "0";
  kv["dfa.rank"] = std::to_string(c.dfa.rank);
  kv["dfa.layers"] = join_ints(c.dfa.layers);
  kv["dfa.factorized"] = c.dfa.factorized ? "1" : "0";
  kv["hsa.enabled"] = c.hsa.enabled ? "1" : "0";
  kv["hsa.layers"] = join_ints(c.hsa.layers);
  kv["hsa.w1"] = format_double(c.hsa.w1);
  kv["hsa.w2"] = format_double(c.hsa.w2);
  kv["hsa.canny_low"] = format_double(c.hsa.canny_low);
  kv["hsa.canny_high"] = format_double(c.hsa.canny_high);
  return kv;
}

inline KeyValues to_key_values(const TrainConfig& c) {
  using detail::format_double;
  KeyValues kv;
  kv["train.epochs"] = std::to_string(c.epochs);
  kv["train.lr"] = format_double(c.lr);
  kv["train.loss_alpha"] = format_double(c.loss_alpha);
  kv["train.qat_epochs"] = std::to_string(c.qat_epochs);
  kv["train.qat_bits"] = std::to_string(c.qat_bits);
  kv["train.qat_lr_scale"] = format_double(c.qat_lr_scale);
  kv["train.seed"] = std::to_string(c.seed);
  kv["train.batch"] = std::to_string(c.batch);
  return kv;
}

// Applies recognized keys and erases them from kv; unknown keys remain.
inline void apply_key_values(KeyValues& kv, ArchitectureConfig& c) {
  using namespace detail;
  auto take = [&](const std::string& key, auto&& fn) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    fn(key, it->second);
    kv.erase(it);
  };
  take("arch.base_h", [&](auto& k, auto& v) { c.base_h = parse_int(k, v); });
  take("arch.base_w", [&](auto& k, auto& v) { c.base_w = parse_int(k, v); });
  take("arch.base_channels", [&](auto& k, auto& v) { c.base_channels = parse_int(k, v); });
  take("arch.min_channels", [&](auto& k, auto& v) { c.min_channels = parse_int(k, v); });
  take("arch.num_layers", [&](auto& k, auto& v) { c.num_layers = parse_int(k, v); });
  take("arch.upsample", [&](auto& k, auto& v) { c.upsample = parse_ints(k, v); });
  take("arch.extra_depths", [&](auto& k, auto& v) { c.extra_depths = parse_ints(k, v); });
  take("arch.embed_freqs", [&](auto& k, auto& v) { c.embed_freqs = parse_int(k, v); });
  take("arch.embed_base", [&](auto& k, auto& v) { c.embed_base = parse_double(k, v); });
  take("arch.num_frames", [&](auto& k, auto& v) { c.num_frames = parse_int(k, v); });
  take("dfa.enabled", [&](auto& k, auto& v) { c.dfa.enabled = parse_bool(k, v); });
  take("dfa.rank", [&](auto& k, auto& v) { c.dfa.rank = parse_int(k, v); });
  take("dfa.layers", [&](auto& k, auto& v) { c.dfa.layers = parse_ints(k, v); });
  take("dfa.factorized", [&](auto& k, auto& v) { c.dfa.factorized = parse_bool(k, v); });
  take("hsa.enabled", [&](auto& k, auto& v) { c.hsa.enabled = parse_bool(k, v); });
  take("hsa.layers", [&](auto& k, auto& v) { c.hsa.layers = parse_ints(k, v); });
  take("hsa.w1", [&](auto& k, auto& v) { c.hsa.w1 = parse_double(k, v); });
  take("hsa.w2", [&](auto& k, auto& v) { c.hsa.w2 = parse_double(k, v); });
  take("hsa.canny_low", [&](auto& k, auto& v) { c.hsa.canny_low = parse_double(k, v); });
  take("hsa.canny_high", [&](auto& k, auto& v) { c.hsa.canny_high = parse_double(k, v); });
}

inline void apply_key_values(KeyValues& kv, TrainConfig& c) {
  using namespace detail;
  auto take = [&](const std::string& key, auto&& fn) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    fn(key, it->second);
    kv.erase(it);
  };
  take("train.epochs", [&](auto& k, auto& v) { c.epochs = parse_int(k, v); });
  take("train.lr", [&](auto& k, auto& v) { c.lr = parse_double(k, v); });
  take("train.loss_alpha", [&](auto& k, auto& v) { c.loss_alpha = parse_double(k, v); });
  take("train.qat_epochs", [&](auto& k, auto& v) { c.qat_epochs = parse_int(k, v); });
  take("train.qat_bits", [&](auto& k, auto& v) { c.qat_bits = parse_int(k, v); });
  take("train.qat_lr_scale", [&](auto& k, auto& v) { c.qat_lr_scale = parse_double(k, v); });
  take("train.seed", [&](auto& k, auto& v) { c.seed = parse_u64(k, v); });
  take("train.batch", [&](auto& k, auto& v) { c.batch = parse_int(k, v); });
}

inline std::string serialize_config(const ArchitectureConfig& c) {
  return format_key_values(to_key_values(c));
}

inline ArchitectureConfig parse_architecture(const std::string& text) {
  KeyValues kv = parse_key_values(text);
  ArchitectureConfig c;
  apply_key_values(kv, c);
  if (!kv.empty()) throw ConfigError("unknown architecture key: " + kv.begin()->first);
  c.validate();
  return c;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace canerv
