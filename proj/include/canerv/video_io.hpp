#pragma once

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "canerv/common.hpp"

namespace canerv {

// T frames of 3 x H x W intensities in [0, 1], stored planar (RGB planes).
struct VideoSequence {
  std::vector<FeatureMap> frames;
  std::string name;
  int source_bit_depth = 8;

  int num_frames() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : frames.front().h; }
  int width() const { return frames.empty() ? 0 : frames.front().w; }
};

enum class FrameLayout { png_dir, raw_rgb24 };

inline FrameLayout parse_layout(const std::string& s) {
  if (s == "png_dir" || s == "png") return FrameLayout::png_dir;
  if (s == "raw_rgb24" || s == "raw") return FrameLayout::raw_rgb24;
  throw ConfigError("unknown frame layout: " + s);
}

// Dimensions for raw input; frames == 0 infers the count from the file size.
struct RawDims {
  int width = 0;
  int height = 0;
  int frames = 0;
};

namespace detail {

inline FeatureMap frame_from_rgb8(const std::uint8_t* rgb, int h, int w, double max_code) {
  FeatureMap f(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < 3; ++k)
        f.at(k, y, x) = rgb[(static_cast<std::size_t>(y) * w + x) * 3 + k] / max_code;
  return f;
}

inline std::vector<std::uint8_t> frame_to_rgb8(const FeatureMap& f) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(f.h) * f.w * 3);
  for (int y = 0; y < f.h; ++y)
    for (int x = 0; x < f.w; ++x)
      for (int k = 0; k < 3; ++k) {
        double v = std::clamp(f.at(k, y, x), 0.0, 1.0);
        out[(static_cast<std::size_t>(y) * f.w + x) * 3 + k] =
            static_cast<std::uint8_t>(round_half_away(v * 255.0));
      }
  return out;
}

inline FeatureMap read_png(const std::filesystem::path& p) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, p.string().c_str()))
    throw IoError("cannot read png " + p.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError("cannot decode png " + p.string() + ": " + image.message);
  }
  return frame_from_rgb8(buf.data(), static_cast<int>(image.height),
                         static_cast<int>(image.width), 255.0);
}

inline void write_png(const std::filesystem::path& p, const FeatureMap& f) {
  auto rgb = frame_to_rgb8(f);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(f.w);
  image.height = static_cast<png_uint_32>(f.h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, p.string().c_str(), 0, rgb.data(), 0, nullptr))
    throw IoError("cannot write png " + p.string() + ": " + image.message);
}

}  // namespace detail

inline std::string frame_filename(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04d.png", t);
  return buf;
}

inline VideoSequence load_sequence(const std::filesystem::path& path, FrameLayout layout,
                                   RawDims dims = {}) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw IoError("no such path: " + path.string());
  VideoSequence seq;
  seq.name = path.filename().string();

  if (layout == FrameLayout::png_dir) {
    if (!fs::is_directory(path)) throw IoError("not a directory: " + path.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no png frames in " + path.string());
    for (const auto& f : files) {
      seq.frames.push_back(detail::read_png(f));
      if (!seq.frames.back().same_shape(seq.frames.front()))
        throw FormatError("inconsistent frame size in " + f.string());
    }
    return seq;
  }

  if (dims.width <= 0 || dims.height <= 0)
    throw ConfigError("raw_rgb24 input needs --width and --height");
  const std::size_t frame_bytes = static_cast<std::size_t>(dims.width) * dims.height * 3;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  std::size_t frames = dims.frames > 0 ? static_cast<std::size_t>(dims.frames)
                                       : bytes.size() / frame_bytes;
  if (frames == 0 || bytes.size() < frames * frame_bytes)
    throw FormatError("truncated raw file " + path.string() + ": " + std::to_string(bytes.size()) +
                      " bytes, need " + std::to_string(std::max<std::size_t>(1, frames) * frame_bytes));
  for (std::size_t t = 0; t < frames; ++t)
    seq.frames.push_back(
        detail::frame_from_rgb8(bytes.data() + t * frame_bytes, dims.height, dims.width, 255.0));
  return seq;
}

inline void save_frames(const VideoSequence& seq, const std::filesystem::path& path,
                        FrameLayout layout) {
  namespace fs = std::filesystem;
  if (layout == FrameLayout::png_dir) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw IoError("cannot create " + path.string() + ": " + ec.message());
    for (int t = 0; t < seq.num_frames(); ++t)
      detail::write_png(path / frame_filename(t), seq.frames[t]);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& f : seq.frames) {
    auto rgb = detail::frame_to_rgb8(f);
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic content

enum class SyntheticKind { static_texture, moving_square, brightness_drift, scene_cut, text_overlay };

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
  if (s == "static_texture") return SyntheticKind::static_texture;
  if (s == "moving_square") return SyntheticKind::moving_square;
  if (s == "brightness_drift") return SyntheticKind::brightness_drift;
  if (s == "scene_cut") return SyntheticKind::scene_cut;
  if (s == "text_overlay") return SyntheticKind::text_overlay;
  throw ConfigError("unsupported synthetic kind: " + s);
}

inline std::string to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::static_texture: return "static_texture";
    case SyntheticKind::moving_square: return "moving_square";
    case SyntheticKind::brightness_drift: return "brightness_drift";
    case SyntheticKind::scene_cut: return "scene_cut";
    case SyntheticKind::text_overlay: return "text_overlay";
  }
  return "?";
}

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::static_texture;
  int frames = 8;
  int height = 64;
  int width = 64;
  std::uint64_t seed = 1;
  // Pixels per frame for moving content; intensity per frame for drift.
  double magnitude = -1.0;  // < 0 selects the per-kind default

  double resolved_magnitude() const {
    if (magnitude >= 0.0) return magnitude;
    switch (kind) {
      case SyntheticKind::moving_square: return 3.0;
      case SyntheticKind::brightness_drift: return 0.03;
      case SyntheticKind::text_overlay: return 2.0;
      default: return 0.0;
    }
  }
};

// Side of the moving square and its top-left corner for frame t.
struct SquarePlacement {
  int size, x, y;
};

inline SquarePlacement square_placement(const SyntheticSpec& s, int t) {
  Rng rng(mix_seed(s.seed, 0x5A));
  const int size = std::max(2, std::min(s.height, s.width) / 4);
  const int span_x = s.width - size + 1;
  const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.height - size + 1)));
  const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(span_x)));
  const int step = static_cast<int>(round_half_away(s.resolved_magnitude() * t));
  return {size, (x0 + step) % span_x, y0};
}

namespace detail {

// Smooth colored texture built from a few random plane waves per channel.
inline FeatureMap smooth_texture(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  FeatureMap f(3, h, w);
  for (int k = 0; k < 3; ++k) {
    const double base = rng.uniform(0.3, 0.7);
    struct Wave {
      double fx, fy, phase, amp;
    };
    std::vector<Wave> waves(4);
    for (auto& wv : waves) {
      wv.fx = static_cast<double>(rng.below(4)) + rng.uniform(0.0, 1.0);
      wv.fy = static_cast<double>(rng.below(4)) + rng.uniform(0.0, 1.0);
      wv.phase = rng.uniform(0.0, 2.0 * M_PI);
      wv.amp = rng.uniform(0.04, 0.09);
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double v = base;
        for (const auto& wv : waves)
          v += wv.amp * std::sin(2.0 * M_PI * (wv.fx * x / w + wv.fy * y / h) + wv.phase);
        f.at(k, y, x) = std::clamp(v, 0.0, 1.0);
      }
  }
  return f;
}

}  // namespace detail

inline VideoSequence generate_synthetic(const SyntheticSpec& s) {
  if (s.frames < 1 || s.height < 8 || s.width < 8)
    throw ConfigError("synthetic dimensions must be positive with H, W >= 8");
  VideoSequence seq;
  seq.name = to_string(s.kind);
  const double mag = s.resolved_magnitude();
  const FeatureMap texture = detail::smooth_texture(s.height, s.width, mix_seed(s.seed, 1));

  switch (s.kind) {
    case SyntheticKind::static_texture:
      seq.frames.assign(static_cast<std::size_t>(s.frames), texture);
      break;

    case SyntheticKind::brightness_drift:
      for (int t = 0; t < s.frames; ++t) {
        FeatureMap f = texture;
        for (double& v : f.data) v = std::clamp(v + mag * t, 0.0, 1.0);
        seq.frames.push_back(std::move(f));
      }
      break;

    case SyntheticKind::scene_cut: {
      const FeatureMap second = detail::smooth_texture(s.height, s.width, mix_seed(s.seed, 2));
      for (int t = 0; t < s.frames; ++t) seq.frames.push_back(t < s.frames / 2 ? texture : second);
      break;
    }

    case SyntheticKind::moving_square: {
      Rng rng(mix_seed(s.seed, 3));
      double bg[3], fg[3];
      for (int k = 0; k < 3; ++k) {
        bg[k] = rng.uniform(0.1, 0.4);
        fg[k] = rng.uniform(0.6, 0.9);
      }
      for (int t = 0; t < s.frames; ++t) {
        FeatureMap f(3, s.height, s.width);
        const auto sq = square_placement(s, t);
        for (int k = 0; k < 3; ++k)
          for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x) {
              const bool inside = y >= sq.y && y < sq.y + sq.size && x >= sq.x && x < sq.x + sq.size;
              f.at(k, y, x) = inside ? fg[k] : bg[k];
            }
        seq.frames.push_back(std::move(f));
      }
      break;
    }

    case SyntheticKind::text_overlay: {
      // Glyph-like strokes on a 5x7 cell grid, scrolling horizontally.
      Rng rng(mix_seed(s.seed, 4));
      const int cell_w = 6, cell_h = 8;
      const int cols = std::max(1, s.width / cell_w);
      const int rows = std::max(1, s.height / (2 * cell_h));
      std::vector<std::uint8_t> strokes(static_cast<std::size_t>(rows) * cols * 35);
      for (auto& b : strokes) b = rng.uniform() < 0.45 ? 1 : 0;
      for (int t = 0; t < s.frames; ++t) {
        FeatureMap f = texture;
        const int shift = static_cast<int>(round_half_away(mag * t));
        for (int r = 0; r < rows; ++r)
          for (int cidx = 0; cidx < cols; ++cidx)
            for (int gy = 0; gy < 7; ++gy)
              for (int gx = 0; gx < 5; ++gx) {
                if (!strokes[(static_cast<std::size_t>(r) * cols + cidx) * 35 + gy * 5 + gx]) continue;
                const int y = r * 2 * cell_h + cell_h / 2 + gy;
                const int x = ((cidx * cell_w + gx - shift) % s.width + s.width) % s.width;
                if (y >= s.height) continue;
                for (int k = 0; k < 3; ++k) f.at(k, y, x) = 1.0;
              }
        seq.frames.push_back(std::move(f));
      }
      break;
    }
  }
  return seq;
}

}  // namespace canerv
