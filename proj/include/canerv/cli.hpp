#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "canerv/bitstream.hpp"
#include "canerv/config.hpp"
#include "canerv/dsa.hpp"
#include "canerv/hsa.hpp"
#include "canerv/metrics.hpp"
#include "canerv/plot.hpp"
#include "canerv/trainer.hpp"
#include "canerv/video_io.hpp"

namespace canerv::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_io = 2, exit_format = 3, exit_numerical = 4 };

// Four quality points for RD sweeps, lowest rate first.
struct Preset {
  const char* name;
  double lambda;
  int base_channels;
};

inline constexpr std::array<Preset, 4> kPresets = {{
    {"q1", 1e7, 16},
    {"q2", 3e7, 24},
    {"q3", 1e8, 32},
    {"q4", 3e8, 48},
}};

inline const Preset& find_preset(const std::string& name) {
  for (const auto& p : kPresets)
    if (name == p.name) return p;
  throw ConfigError("unknown preset " + name + " (expected q1..q4)");
}

inline constexpr double kDefaultLambda = 1e8;

// FNV-1a 64 rendered as 16 hex digits.
inline std::string fnv1a_hex(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Hash of the 8-bit quantized frames.
inline std::string sequence_hash(const VideoSequence& seq) {
  std::vector<std::uint8_t> all;
  for (const auto& f : seq.frames) {
    auto rgb = detail::frame_to_rgb8(f);
    all.insert(all.end(), rgb.begin(), rgb.end());
  }
  return fnv1a_hex(all);
}

struct SourceOptions {
  std::string path;
  std::string layout = "png_dir";
  std::string synthetic;  // kind name; replaces path when set
  int width = 0, height = 0, frames = 0;
  std::uint64_t synth_seed = 1;
  double magnitude = -1.0;

  std::string describe() const { return synthetic.empty() ? path : "synthetic:" + synthetic; }
};

inline VideoSequence load_source(const SourceOptions& s) {
  if (!s.synthetic.empty()) {
    SyntheticSpec spec;
    spec.kind = parse_synthetic_kind(s.synthetic);
    if (s.frames > 0) spec.frames = s.frames;
    if (s.height > 0) spec.height = s.height;
    if (s.width > 0) spec.width = s.width;
    spec.seed = s.synth_seed;
    spec.magnitude = s.magnitude;
    return generate_synthetic(spec);
  }
  if (s.path.empty()) throw ConfigError("no input given (use --input or --synthetic)");
  return load_sequence(s.path, parse_layout(s.layout), {s.width, s.height, s.frames});
}

inline std::string default_manifest_path(const std::string& output) {
  std::string p = output;
  while (p.size() > 1 && p.back() == '/') p.pop_back();
  return p + ".manifest.json";
}

inline void write_manifest(const std::string& path, const nlohmann::ordered_json& j) {
  const std::string text = j.dump(2) + "\n";
  write_binary_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

class Stopwatch {
 public:
  double lap_ms() {
    const auto now = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(now - last_).count();
    last_ = now;
    return ms;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// encode

struct EncodeFlags {
  SourceOptions source;
  std::string output;
  std::string manifest;  // empty = <output>.manifest.json
  std::string config_file;
  std::string loss_csv;
  std::string preset;
  std::optional<double> lambda;
  std::optional<int> epochs, qat_epochs, rank;
  std::uint64_t seed = 0;
  bool no_dsa = false, no_dfa = false, no_hsa = false;
  bool dsa_single = false;
  bool emit_search_trace = false;
  bool deterministic = false;
};

struct EncodeSettings {
  ArchitectureConfig arch;
  TrainConfig train;
  double lambda = kDefaultLambda;
  bool dsa = true;
  bool dsa_single = false;
  int search_budget = -1;  // < 0: default from epochs
};

inline KeyValues to_key_values(const EncodeSettings& s) {
  KeyValues kv = canerv::to_key_values(s.arch);
  for (auto& [k, v] : canerv::to_key_values(s.train)) kv[k] = v;
  kv["codec.lambda"] = detail::format_double(s.lambda);
  kv["codec.dsa"] = s.dsa ? "1" : "0";
  kv["codec.dsa_single"] = s.dsa_single ? "1" : "0";
  kv["codec.search_budget"] = std::to_string(s.search_budget);
  return kv;
}

inline void apply_key_values(KeyValues& kv, EncodeSettings& s) {
  canerv::apply_key_values(kv, s.arch);
  canerv::apply_key_values(kv, s.train);
  auto take = [&](const std::string& key, auto&& fn) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    fn(key, it->second);
    kv.erase(it);
  };
  take("codec.lambda", [&](auto& k, auto& v) { s.lambda = detail::parse_double(k, v); });
  take("codec.dsa", [&](auto& k, auto& v) { s.dsa = detail::parse_bool(k, v); });
  take("codec.dsa_single", [&](auto& k, auto& v) { s.dsa_single = detail::parse_bool(k, v); });
  take("codec.search_budget", [&](auto& k, auto& v) { s.search_budget = detail::parse_int(k, v); });
}

// Defaults, then preset, then flags, then the config file.
inline EncodeSettings resolve_settings(const EncodeFlags& f, const VideoSequence& seq) {
  EncodeSettings s;
  s.arch = default_architecture(seq.height(), seq.width(), seq.num_frames());
  s.arch.dfa.enabled = true;
  s.arch.dfa.factorized = true;
  s.arch.hsa.enabled = true;
  if (!f.preset.empty()) {
    const Preset& p = find_preset(f.preset);
    s.lambda = p.lambda;
    s.arch.base_channels = p.base_channels;
  }
  if (f.lambda) s.lambda = *f.lambda;
  if (f.epochs) s.train.epochs = *f.epochs;
  if (f.qat_epochs) s.train.qat_epochs = *f.qat_epochs;
  if (f.rank) s.arch.dfa.rank = *f.rank;
  s.train.seed = f.seed;
  if (f.no_dsa) s.dsa = false;
  if (f.no_dfa) s.arch.dfa.enabled = false;
  if (f.no_hsa) s.arch.hsa.enabled = false;
  if (f.dsa_single) s.dsa_single = true;
  if (!f.config_file.empty()) {
    KeyValues kv = parse_key_values(read_text_file(f.config_file));
    apply_key_values(kv, s);
    if (!kv.empty()) throw ConfigError("unknown config key: " + kv.begin()->first);
  }
  if (!std::isfinite(s.lambda) || s.lambda < 0) throw ConfigError("lambda must be finite and >= 0");
  if (s.train.epochs < 1) throw ConfigError("epochs must be >= 1");
  s.arch.num_frames = seq.num_frames();
  s.arch.validate();
  s.arch.check_resolution(seq.height(), seq.width());
  s.train.validate();
  return s;
}

struct EncodeOutcome {
  EncodeSettings settings;
  ArchitectureConfig final_arch;
  Bitstream stream;
  VideoSequence decoded;
  double bpp = 0, psnr = 0, msssim = 0;
  nlohmann::ordered_json manifest;
};

inline nlohmann::ordered_json search_trace_json(const SearchResult& r) {
  auto out = nlohmann::ordered_json::array();
  for (const auto& step : r.trace) {
    nlohmann::ordered_json s;
    s["layer"] = step.layer;
    s["chosen"] = step.chosen;
    auto ev = nlohmann::ordered_json::array();
    for (const auto& [d, l] : step.evaluated)
      ev.push_back({{"depth", d}, {"distortion", l.distortion}, {"rate_bits", l.rate_bits}, {"loss", l.value}});
    s["evaluated"] = ev;
    out.push_back(s);
  }
  return out;
}

inline EncodeOutcome run_encode(const EncodeFlags& f, std::FILE* log = stdout) {
  if (f.output.empty()) throw ConfigError("encode needs --output");
  Stopwatch clock;
  nlohmann::ordered_json timings;
  const VideoSequence seq = load_source(f.source);
  timings["load_ms"] = clock.lap_ms();

  EncodeOutcome out;
  out.settings = resolve_settings(f, seq);
  const EncodeSettings& s = out.settings;
  ArchitectureConfig arch = s.arch;

  nlohmann::ordered_json search;
  search["enabled"] = s.dsa;
  search["single_depth"] = s.dsa_single;
  if (s.dsa) {
    SearchOptions so;
    so.lambda = s.lambda;
    so.search_budget = s.search_budget >= 0 ? s.search_budget : default_search_budget(s.train.epochs);
    so.single_depth = s.dsa_single;
    so.train = s.train;
    const SearchResult r = optimize_architecture(seq, arch, so);
    arch = r.config;
    search["budget_epochs"] = so.search_budget;
    search["evaluations"] = r.evaluations;
    if (f.emit_search_trace) search["trace"] = search_trace_json(r);
  }
  search["extra_depths"] = arch.extra_depths.empty() ? std::vector<int>(static_cast<std::size_t>(arch.num_layers), 0)
                                                     : arch.extra_depths;
  timings["search_ms"] = clock.lap_ms();

  TrainResult trained = train(seq, arch, s.train);
  if (!f.loss_csv.empty()) write_loss_csv(f.loss_csv, trained.history);
  timings["train_ms"] = clock.lap_ms();
  TrainResult tuned = qat_finetune(trained.model, seq, s.train);
  timings["qat_ms"] = clock.lap_ms();

  out.stream = serialize(tuned.model);
  write_binary_file(f.output, out.stream.bytes);
  out.decoded = deserialize_and_decode(out.stream.bytes);
  out.final_arch = arch;
  out.bpp = bpp(static_cast<double>(out.stream.total_bits()), seq.num_frames(), seq.height(), seq.width());
  out.psnr = psnr(out.decoded, seq);
  out.msssim = ms_ssim(out.decoded, seq);
  timings["serialize_ms"] = clock.lap_ms();

  const std::string manifest_path = f.manifest.empty() ? default_manifest_path(f.output) : f.manifest;
  auto& m = out.manifest;
  m["tool"] = "canerv";
  m["version"] = kToolVersion;
  m["command"] = "encode";
  m["deterministic"] = f.deterministic;
  m["input"] = {{"source", f.source.describe()},
                {"hash", sequence_hash(seq)},
                {"frames", seq.num_frames()},
                {"height", seq.height()},
                {"width", seq.width()}};
  nlohmann::ordered_json cfg;
  for (const auto& [k, v] : to_key_values(s)) cfg[k] = v;
  m["config"] = cfg;
  m["features"] = {{"dsa", s.dsa}, {"dfa", arch.dfa.enabled}, {"hsa", arch.hsa.enabled}};
  m["search"] = search;
  m["final_architecture"] = serialize_config(arch);
  m["results"] = {{"bits", out.stream.total_bits()},
                  {"bpp", out.bpp},
                  {"psnr", out.psnr},
                  {"msssim", out.msssim},
                  {"compressible_params", count_params(tuned.model, true)},
                  {"final_train_loss", trained.history.empty() ? 0.0 : trained.history.back().total}};
  m["outputs"] = {{"bitstream", f.output}, {"manifest", manifest_path}};
  if (!f.loss_csv.empty()) m["outputs"]["loss_csv"] = f.loss_csv;
  if (!f.deterministic) m["timings"] = timings;
  write_manifest(manifest_path, m);

  if (log)
    std::fprintf(log, "encoded %s: %zu bits, %.4f bpp, PSNR %.3f dB, MS-SSIM %.5f\n", f.source.describe().c_str(),
                 out.stream.total_bits(), out.bpp, out.psnr, out.msssim);
  return out;
}

// ---------------------------------------------------------------------------
// decode

struct DecodeFlags {
  std::string input;
  std::string output;  // frames directory
  std::string manifest;
  std::optional<int> frame;
  bool deterministic = false;
};

// The stream is fully parsed and every requested frame reconstructed before
// anything is written.
inline VideoSequence run_decode(const DecodeFlags& f, std::FILE* log = stdout) {
  if (f.input.empty() || f.output.empty()) throw ConfigError("decode needs --input and --output");
  Stopwatch clock;
  const auto bytes = read_binary_file(f.input);
  const VideoSequence seq = deserialize_and_decode(bytes, f.frame);
  const double decode_ms = clock.lap_ms();

  std::error_code ec;
  std::filesystem::create_directories(f.output, ec);
  if (ec) throw IoError("cannot create " + f.output + ": " + ec.message());
  std::vector<std::string> written;
  for (int i = 0; i < seq.num_frames(); ++i) {
    const int t = f.frame ? *f.frame : i;
    const auto p = std::filesystem::path(f.output) / frame_filename(t);
    detail::write_png(p, seq.frames[static_cast<std::size_t>(i)]);
    written.push_back(p.string());
  }

  nlohmann::ordered_json m;
  m["tool"] = "canerv";
  m["version"] = kToolVersion;
  m["command"] = "decode";
  m["deterministic"] = f.deterministic;
  m["input"] = {{"bitstream", f.input}, {"hash", fnv1a_hex(bytes)}, {"bits", bytes.size() * 8}};
  m["frame"] = f.frame ? nlohmann::ordered_json(*f.frame) : nlohmann::ordered_json(nullptr);
  m["outputs"] = {{"frames", written}};
  if (!f.deterministic) m["timings"] = {{"decode_ms", decode_ms}, {"write_ms", clock.lap_ms()}};
  write_manifest(f.manifest.empty() ? default_manifest_path(f.output) : f.manifest, m);
  if (log) std::fprintf(log, "decoded %d frame(s) to %s\n", seq.num_frames(), f.output.c_str());
  return seq;
}

// ---------------------------------------------------------------------------
// eval

struct EvalFlags {
  SourceOptions original;
  SourceOptions decoded;
  std::optional<double> bits;
  std::string stream;  // bits taken from this file's size when set
  std::string csv;
};

struct EvalRow {
  std::string frame;
  double psnr, msssim;
};

inline std::vector<EvalRow> run_eval(const EvalFlags& f, std::FILE* log = stdout) {
  const VideoSequence a = load_source(f.original), b = load_source(f.decoded);
  if (a.num_frames() != b.num_frames() || a.height() != b.height() || a.width() != b.width())
    throw ConfigError("original and decoded sequences differ in shape");
  std::optional<double> bits = f.bits;
  if (!f.stream.empty()) bits = static_cast<double>(read_binary_file(f.stream).size() * 8);
  std::optional<double> rate;
  if (bits) rate = bpp(*bits, a.num_frames(), a.height(), a.width());

  std::vector<EvalRow> rows;
  for (int t = 0; t < a.num_frames(); ++t) {
    const auto& x = a.frames[static_cast<std::size_t>(t)];
    const auto& y = b.frames[static_cast<std::size_t>(t)];
    rows.push_back({std::to_string(t), psnr(y, x), ms_ssim(y, x)});
  }
  rows.push_back({"all", psnr(b, a), ms_ssim(b, a)});

  std::string text = "frame,psnr,msssim,bpp\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.8f,", r.frame.c_str(), r.psnr, r.msssim);
    text += buf;
    if (rate) {
      std::snprintf(buf, sizeof buf, "%.8f", *rate);
      text += buf;
    }
    text += "\n";
  }
  if (!f.csv.empty())
    write_binary_file(f.csv, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  if (log) std::fputs(text.c_str(), log);
  return rows;
}

// ---------------------------------------------------------------------------
// synth

struct SynthFlags {
  SyntheticSpec spec;
  std::string output;
  std::string layout = "png_dir";
  std::string manifest;
};

inline VideoSequence run_synth(const SynthFlags& f, std::FILE* log = stdout) {
  if (f.output.empty()) throw ConfigError("synth needs --output");
  const VideoSequence seq = generate_synthetic(f.spec);
  save_frames(seq, f.output, parse_layout(f.layout));
  nlohmann::ordered_json m;
  m["tool"] = "canerv";
  m["version"] = kToolVersion;
  m["command"] = "synth";
  m["spec"] = {{"kind", to_string(f.spec.kind)},
               {"frames", f.spec.frames},
               {"height", f.spec.height},
               {"width", f.spec.width},
               {"seed", f.spec.seed},
               {"magnitude", f.spec.resolved_magnitude()}};
  m["hash"] = sequence_hash(seq);
  m["outputs"] = {{"frames", f.output}, {"layout", f.layout}};
  write_manifest(f.manifest.empty() ? default_manifest_path(f.output) : f.manifest, m);
  if (log) std::fprintf(log, "wrote %d %dx%d frames to %s\n", seq.num_frames(), seq.height(), seq.width(), f.output.c_str());
  return seq;
}

// ---------------------------------------------------------------------------
// rd

struct RdFlags {
  std::vector<std::string> streams;
  SourceOptions source;
  std::string csv;
  std::string plot;
  std::string anchor_csv;  // optional second curve; BD-rate printed when given
  std::string quality = "psnr";
};

struct RdOutcome {
  RDCurve curve;
  std::optional<double> bdbr;
};

inline RdOutcome run_rd(const RdFlags& f, std::FILE* log = stdout) {
  if (f.streams.empty()) throw ConfigError("rd needs at least one bitstream");
  if (f.csv.empty()) throw ConfigError("rd needs --csv");
  const Quality q = f.quality == "psnr" ? Quality::psnr
                    : f.quality == "msssim" ? Quality::msssim
                                            : throw ConfigError("quality must be psnr or msssim");
  const VideoSequence src = load_source(f.source);
  RdOutcome out;
  for (const auto& path : f.streams) {
    const auto bytes = read_binary_file(path);
    const VideoSequence dec = deserialize_and_decode(bytes);
    if (dec.num_frames() != src.num_frames() || dec.height() != src.height() || dec.width() != src.width())
      throw ConfigError(path + " does not match the source dimensions");
    out.curve.push_back({bpp(static_cast<double>(bytes.size() * 8), src.num_frames(), src.height(), src.width()),
                         psnr(dec, src), ms_ssim(dec, src)});
  }
  std::sort(out.curve.begin(), out.curve.end(), [](const RDPoint& a, const RDPoint& b) { return a.bpp < b.bpp; });
  write_rd_csv(f.csv, out.curve);

  std::vector<std::pair<std::string, RDCurve>> curves = {{"test", out.curve}};
  if (!f.anchor_csv.empty()) {
    RDCurve anchor = read_rd_csv(f.anchor_csv);
    curves.insert(curves.begin(), {"anchor", anchor});
    out.bdbr = bdbr(anchor, out.curve, q);
  }
  if (!f.plot.empty()) plot_rd(curves, q).save_png(f.plot);
  if (log) {
    for (const auto& p : out.curve) std::fprintf(log, "bpp %.5f  PSNR %.3f  MS-SSIM %.5f\n", p.bpp, p.psnr, p.msssim);
    if (out.bdbr) std::fprintf(log, "BD-rate vs anchor (%s): %.3f%%\n", f.quality.c_str(), *out.bdbr);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateFlags {
  EncodeFlags base;  // source, epochs, lambda, seed, config
  std::vector<std::string> variants = {"baseline", "dsa", "dfa", "hsa", "full"};
  int seeds = 1;
  std::string csv;
};

struct AblateRow {
  std::string variant;
  std::uint64_t seed;
  std::size_t bits;
  double bpp, psnr, msssim, edge_mse;
  std::size_t params;
};

inline std::vector<AblateRow> run_ablate(const AblateFlags& f, std::FILE* log = stdout) {
  if (f.csv.empty()) throw ConfigError("ablate needs --csv");
  if (f.seeds < 1) throw ConfigError("seeds must be >= 1");
  const VideoSequence seq = load_source(f.base.source);
  std::vector<AblateRow> rows;
  for (const auto& v : f.variants) {
    if (v != "baseline" && v != "dsa" && v != "dfa" && v != "hsa" && v != "full")
      throw ConfigError("unknown ablation variant " + v);
    for (int k = 0; k < f.seeds; ++k) {
      EncodeFlags ef = f.base;
      ef.seed = f.base.seed + static_cast<std::uint64_t>(k);
      ef.no_dsa = !(v == "dsa" || v == "full");
      ef.no_dfa = !(v == "dfa" || v == "full");
      ef.no_hsa = !(v == "hsa" || v == "full");
      EncodeSettings s = resolve_settings(ef, seq);
      ArchitectureConfig arch = s.arch;
      if (s.dsa) {
        SearchOptions so;
        so.lambda = s.lambda;
        so.search_budget = s.search_budget >= 0 ? s.search_budget : default_search_budget(s.train.epochs);
        so.single_depth = s.dsa_single;
        so.train = s.train;
        arch = optimize_architecture(seq, arch, so).config;
      }
      const TrainedModel tuned = qat_finetune(train(seq, arch, s.train).model, seq, s.train).model;
      const Bitstream bs = serialize(tuned);
      const VideoSequence dec = deserialize_and_decode(bs.bytes);
      rows.push_back({v, ef.seed, bs.total_bits(),
                      bpp(static_cast<double>(bs.total_bits()), seq.num_frames(), seq.height(), seq.width()),
                      psnr(dec, seq), ms_ssim(dec, seq), edge_mse(dec, seq, arch.hsa.canny_low, arch.hsa.canny_high),
                      count_params(tuned, true)});
      if (log) {
        const auto& r = rows.back();
        std::fprintf(log, "%-8s seed %llu: %.4f bpp, PSNR %.3f dB, edge MSE %.3e\n", v.c_str(),
                     static_cast<unsigned long long>(r.seed), r.bpp, r.psnr, r.edge_mse);
      }
    }
  }
  std::string text = "variant,seed,bits,bpp,psnr,msssim,edge_mse,params\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%llu,%zu,%.8f,%.6f,%.8f,%.6e,%zu\n", r.variant.c_str(),
                  static_cast<unsigned long long>(r.seed), r.bits, r.bpp, r.psnr, r.msssim, r.edge_mse, r.params);
    text += buf;
  }
  write_binary_file(f.csv, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return rows;
}

// Maps library exceptions onto process exit codes.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return exit_io;
  if (dynamic_cast<const FormatError*>(&e)) return exit_format;
  if (dynamic_cast<const NumericalError*>(&e)) return exit_numerical;
  return exit_usage;
}

}  // namespace canerv::cli
