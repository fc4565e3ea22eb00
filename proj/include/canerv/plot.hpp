#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "canerv/common.hpp"
#include "canerv/metrics.hpp"
#include "canerv/video_io.hpp"

namespace canerv {

using Rgb = std::array<double, 3>;

// Minimal raster canvas for RD plots; (0,0) is the top-left pixel.
class Canvas {
 public:
  Canvas(int width, int height, Rgb background = {1, 1, 1}) : img_(3, height, width) {
    for (int k = 0; k < 3; ++k) std::fill(img_.channel(k), img_.channel(k) + img_.plane(), background[k]);
  }

  int width() const { return img_.w; }
  int height() const { return img_.h; }
  const FeatureMap& image() const { return img_; }

  void set(int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= img_.w || y >= img_.h) return;
    for (int k = 0; k < 3; ++k) img_.at(k, y, x) = c[static_cast<std::size_t>(k)];
  }

  void line(double x0, double y0, double x1, double y1, const Rgb& c, int thickness = 1) {
    const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double a = static_cast<double>(i) / steps;
      dot(x0 + a * (x1 - x0), y0 + a * (y1 - y0), thickness / 2, c);
    }
  }

  void dot(double cx, double cy, int radius, const Rgb& c) {
    const int x = static_cast<int>(std::lround(cx)), y = static_cast<int>(std::lround(cy));
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx)
        if (dx * dx + dy * dy <= radius * radius) set(x + dx, y + dy, c);
  }

  void save_png(const std::filesystem::path& p) const { detail::write_png(p, img_); }

 private:
  FeatureMap img_;
};

struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (x, y)
  Rgb color;
};

// Quality-vs-bpp chart: frame, grid lines at "nice" tick values, one polyline
// with markers per series. No text is rendered.
inline Canvas plot_series(const std::vector<PlotSeries>& series, int width = 640, int height = 480) {
  if (series.empty()) throw ConfigError("nothing to plot");
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (!std::isfinite(xmin) || !std::isfinite(ymin)) throw ConfigError("plot needs finite points");
  auto pad = [](double& lo, double& hi) {
    const double span = hi > lo ? hi - lo : std::max(1e-6, std::abs(lo) * 0.1);
    lo -= 0.08 * span;
    hi += 0.08 * span;
  };
  pad(xmin, xmax);
  pad(ymin, ymax);

  Canvas cv(width, height);
  const int left = 60, right = width - 20, top = 20, bottom = height - 50;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
  auto py = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * (bottom - top); };
  auto tick = [](double lo, double hi) {
    const double raw = (hi - lo) / 6.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0, 10.0})
      if (raw <= m * mag) return m * mag;
    return 10.0 * mag;
  };
  const Rgb grid = {0.88, 0.88, 0.88}, axis = {0.1, 0.1, 0.1};
  const double tx = tick(xmin, xmax), ty = tick(ymin, ymax);
  for (double x = std::ceil(xmin / tx) * tx; x <= xmax; x += tx) {
    cv.line(px(x), top, px(x), bottom, grid);
    cv.line(px(x), bottom, px(x), bottom + 6, axis);
  }
  for (double y = std::ceil(ymin / ty) * ty; y <= ymax; y += ty) {
    cv.line(left, py(y), right, py(y), grid);
    cv.line(left - 6, py(y), left, py(y), axis);
  }
  cv.line(left, top, left, bottom, axis, 2);
  cv.line(left, bottom, right, bottom, axis, 2);

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    for (std::size_t k = 1; k < s.points.size(); ++k)
      cv.line(px(s.points[k - 1].first), py(s.points[k - 1].second), px(s.points[k].first),
              py(s.points[k].second), s.color, 2);
    for (auto [x, y] : s.points) cv.dot(px(x), py(y), 4, s.color);
    // legend swatch, one per series, top-right
    const int ly = top + 10 + static_cast<int>(i) * 16;
    cv.line(right - 40, ly, right - 10, ly, s.color, 3);
  }
  return cv;
}

inline const std::vector<Rgb>& plot_palette() {
  static const std::vector<Rgb> p = {{0.12, 0.47, 0.71}, {0.84, 0.15, 0.16}, {0.17, 0.63, 0.17}, {1.0, 0.5, 0.05}};
  return p;
}

// PSNR or MS-SSIM against bpp for one or more curves.
inline Canvas plot_rd(const std::vector<std::pair<std::string, RDCurve>>& curves, Quality quality) {
  std::vector<PlotSeries> series;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    PlotSeries s{curves[i].first, {}, plot_palette()[i % plot_palette().size()]};
    RDCurve c = curves[i].second;
    std::sort(c.begin(), c.end(), [](const RDPoint& a, const RDPoint& b) { return a.bpp < b.bpp; });
    for (const auto& p : c) s.points.emplace_back(p.bpp, quality == Quality::psnr ? p.psnr : p.msssim);
    series.push_back(std::move(s));
  }
  return plot_series(series);
}

}  // namespace canerv
