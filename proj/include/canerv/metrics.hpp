#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "canerv/common.hpp"
#include "canerv/video_io.hpp"

namespace canerv {

constexpr double kPsnrCap = 99.0;

inline double mse(const FeatureMap& a, const FeatureMap& b) {
  if (!a.same_shape(b)) throw ConfigError("mse: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

inline double mse(const VideoSequence& a, const VideoSequence& b) {
  if (a.num_frames() != b.num_frames()) throw ConfigError("mse: frame count mismatch");
  double s = 0.0;
  for (int t = 0; t < a.num_frames(); ++t) s += mse(a.frames[static_cast<std::size_t>(t)], b.frames[static_cast<std::size_t>(t)]);
  return s / a.num_frames();
}

inline double psnr_from_mse(double m) {
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

// PSNR of the mean squared error over all frames, on the [0, 1] scale.
inline double psnr(const VideoSequence& a, const VideoSequence& b) { return psnr_from_mse(mse(a, b)); }
inline double psnr(const FeatureMap& a, const FeatureMap& b) { return psnr_from_mse(mse(a, b)); }

// ---------------------------------------------------------------------------
// MS-SSIM: 11-tap Gaussian window (sigma 1.5), valid filtering, K1 = 0.01,
// K2 = 0.03, 2x2 average pooling between scales. The scale count shrinks so
// that the coarsest scale keeps at least 16 pixels per side; the standard
// five weights are truncated and renormalized accordingly.

namespace msssim_detail {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr std::array<double, 5> kWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

inline const std::array<double, kWin>& window() {
  static const std::array<double, kWin> w = [] {
    std::array<double, kWin> g{};
    double s = 0.0;
    for (int i = 0; i < kWin; ++i) {
      const double d = i - kWin / 2;
      g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
      s += g[static_cast<std::size_t>(i)];
    }
    for (auto& v : g) v /= s;
    return g;
  }();
  return w;
}

struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  Plane() = default;
  Plane(int hh, int ww, double fill = 0.0) : h(hh), w(ww), v(static_cast<std::size_t>(hh) * ww, fill) {}
  double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

inline Plane filter_valid(const Plane& in) {
  const auto& g = window();
  Plane tmp(in.h, in.w - kWin + 1);
  for (int y = 0; y < tmp.h; ++y)
    for (int x = 0; x < tmp.w; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[static_cast<std::size_t>(k)] * in.at(y, x + k);
      tmp.at(y, x) = s;
    }
  Plane out(in.h - kWin + 1, tmp.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[static_cast<std::size_t>(k)] * tmp.at(y + k, x);
      out.at(y, x) = s;
    }
  return out;
}

// Adjoint of filter_valid.
inline Plane filter_valid_adjoint(const Plane& m, int h, int w) {
  const auto& g = window();
  Plane tmp(h, m.w);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x)
      for (int k = 0; k < kWin; ++k) tmp.at(y + k, x) += g[static_cast<std::size_t>(k)] * m.at(y, x);
  Plane out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < m.w; ++x)
      for (int k = 0; k < kWin; ++k) out.at(y, x + k) += g[static_cast<std::size_t>(k)] * tmp.at(y, x);
  return out;
}

inline Plane pool2(const Plane& in) {
  Plane out(in.h / 2, in.w / 2);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      out.at(y, x) = 0.25 * (in.at(2 * y, 2 * x) + in.at(2 * y, 2 * x + 1) + in.at(2 * y + 1, 2 * x) +
                             in.at(2 * y + 1, 2 * x + 1));
  return out;
}

inline Plane pool2_adjoint(const Plane& g, int h, int w) {
  Plane out(h, w);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      const double v = 0.25 * g.at(y, x);
      out.at(2 * y, 2 * x) += v;
      out.at(2 * y, 2 * x + 1) += v;
      out.at(2 * y + 1, 2 * x) += v;
      out.at(2 * y + 1, 2 * x + 1) += v;
    }
  return out;
}

struct ScaleResult {
  double cs = 0.0;
  double ssim = 0.0;
  Plane dcs;    // d(cs)/dx
  Plane dssim;  // d(ssim)/dx
};

inline ScaleResult ssim_scale(const Plane& x, const Plane& y, bool grad) {
  Plane xx(x.h, x.w), yy(x.h, x.w), xy(x.h, x.w);
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    xx.v[i] = x.v[i] * x.v[i];
    yy.v[i] = y.v[i] * y.v[i];
    xy.v[i] = x.v[i] * y.v[i];
  }
  const Plane mx = filter_valid(x), my = filter_valid(y);
  const Plane exx = filter_valid(xx), eyy = filter_valid(yy), exy = filter_valid(xy);
  const std::size_t n = mx.v.size();
  ScaleResult r;
  Plane cs_mu, cs_xx, cs_xy, ss_mu, ss_xx, ss_xy;
  if (grad) {
    cs_mu = cs_xx = cs_xy = ss_mu = ss_xx = ss_xy = Plane(mx.h, mx.w);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ux = mx.v[i], uy = my.v[i];
    const double sxx = exx.v[i] - ux * ux, syy = eyy.v[i] - uy * uy, sxy = exy.v[i] - ux * uy;
    const double a = 2.0 * sxy + kC2, b = sxx + syy + kC2;
    const double p = 2.0 * ux * uy + kC1, q = ux * ux + uy * uy + kC1;
    const double cs = a / b, l = p / q;
    r.cs += cs;
    r.ssim += l * cs;
    if (grad) {
      // partials of cs and l with respect to the local statistics
      const double dcs_dsxy = 2.0 / b;
      const double dcs_dsxx = -a / (b * b);
      const double dl_dux = (2.0 * uy * q - p * 2.0 * ux) / (q * q);
      // sxx = E[x^2] - ux^2, sxy = E[xy] - ux*uy
      cs_xx.v[i] = dcs_dsxx * inv_n;
      cs_xy.v[i] = dcs_dsxy * inv_n;
      cs_mu.v[i] = (-2.0 * ux * dcs_dsxx - uy * dcs_dsxy) * inv_n;
      ss_xx.v[i] = l * cs_xx.v[i];
      ss_xy.v[i] = l * cs_xy.v[i];
      ss_mu.v[i] = l * cs_mu.v[i] + cs * dl_dux * inv_n;
    }
  }
  r.cs *= inv_n;
  r.ssim *= inv_n;
  if (grad) {
    auto pull = [&](const Plane& c_mu, const Plane& c_xx, const Plane& c_xy) {
      Plane gm = filter_valid_adjoint(c_mu, x.h, x.w);
      Plane gxx = filter_valid_adjoint(c_xx, x.h, x.w);
      Plane gxy = filter_valid_adjoint(c_xy, x.h, x.w);
      for (std::size_t i = 0; i < gm.v.size(); ++i) gm.v[i] += 2.0 * x.v[i] * gxx.v[i] + y.v[i] * gxy.v[i];
      return gm;
    };
    r.dcs = pull(cs_mu, cs_xx, cs_xy);
    r.dssim = pull(ss_mu, ss_xx, ss_xy);
  }
  return r;
}

inline Plane from_channel(const FeatureMap& f, int c) {
  Plane p(f.h, f.w);
  std::copy(f.channel(c), f.channel(c) + f.plane(), p.v.begin());
  return p;
}

}  // namespace msssim_detail

inline int msssim_scales(int h, int w) {
  const int side = std::min(h, w);
  if (side < 16) throw ConfigError("MS-SSIM needs frames of at least 16x16");
  int m = 1;
  while (m < 5 && (side >> m) >= 16) ++m;
  return m;
}

struct MsSsimResult {
  double value = 0.0;
  FeatureMap grad;  // d(value)/d(a), filled on request
};

// Mean over channels of single-channel MS-SSIM; gradient taken w.r.t. `a`.
inline MsSsimResult ms_ssim_with_grad(const FeatureMap& a, const FeatureMap& b, bool want_grad) {
  using namespace msssim_detail;
  if (!a.same_shape(b)) throw ConfigError("ms_ssim: shape mismatch");
  const int scales = msssim_scales(a.h, a.w);
  double wsum = 0.0;
  for (int j = 0; j < scales; ++j) wsum += kWeights[static_cast<std::size_t>(j)];

  MsSsimResult out;
  if (want_grad) out.grad = FeatureMap(a.c, a.h, a.w);
  for (int c = 0; c < a.c; ++c) {
    std::vector<Plane> xs{from_channel(a, c)}, ys{from_channel(b, c)};
    for (int j = 1; j < scales; ++j) {
      xs.push_back(pool2(xs.back()));
      ys.push_back(pool2(ys.back()));
    }
    std::vector<ScaleResult> rs;
    std::vector<double> q(static_cast<std::size_t>(scales));
    double logv = 0.0;
    bool zero = false;
    for (int j = 0; j < scales; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      rs.push_back(ssim_scale(xs[ju], ys[ju], want_grad));
      q[ju] = std::max(0.0, j + 1 < scales ? rs.back().cs : rs.back().ssim);
      const double wj = kWeights[ju] / wsum;
      if (q[ju] <= 0.0) zero = true;
      else logv += wj * std::log(q[ju]);
    }
    const double v = zero ? 0.0 : std::exp(logv);
    out.value += v / a.c;
    if (!want_grad || zero) continue;
    // Back through the pyramid from the coarsest scale.
    Plane carry;
    for (int j = scales - 1; j >= 0; --j) {
      const auto ju = static_cast<std::size_t>(j);
      const double wj = kWeights[ju] / wsum;
      const Plane& dq = j + 1 < scales ? rs[ju].dcs : rs[ju].dssim;
      Plane g = dq;
      const double coef = wj * v / q[ju] / a.c;
      for (double& e : g.v) e *= coef;
      if (j + 1 < scales) {
        Plane up = pool2_adjoint(carry, xs[ju].h, xs[ju].w);
        for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += up.v[i];
      }
      carry = std::move(g);
    }
    std::copy(carry.v.begin(), carry.v.end(), out.grad.channel(c));
  }
  return out;
}

inline double ms_ssim(const FeatureMap& a, const FeatureMap& b) { return ms_ssim_with_grad(a, b, false).value; }

inline double ms_ssim(const VideoSequence& a, const VideoSequence& b) {
  if (a.num_frames() != b.num_frames()) throw ConfigError("ms_ssim: frame count mismatch");
  double s = 0.0;
  for (int t = 0; t < a.num_frames(); ++t) s += ms_ssim(a.frames[static_cast<std::size_t>(t)], b.frames[static_cast<std::size_t>(t)]);
  return s / a.num_frames();
}

inline double bpp(double total_bits, int frames, int height, int width) {
  const double denom = static_cast<double>(frames) * height * width;
  if (frames <= 0 || height <= 0 || width <= 0) throw ConfigError("bpp: dimensions must be positive");
  return total_bits / denom;
}

// ---------------------------------------------------------------------------
// Rate-distortion curves and Bjontegaard delta rate.

struct RDPoint {
  double bpp = 0.0;
  double psnr = 0.0;
  double msssim = 0.0;
};

using RDCurve = std::vector<RDPoint>;

enum class Quality { psnr, msssim };
enum class BdMethod { cubic_fit, pchip };

namespace bd_detail {

// Antiderivative of c0 + c1 s + c2 s^2 + c3 s^3.
inline double poly_integral(const std::array<double, 4>& c, double s) {
  return s * (c[0] + s * (c[1] / 2.0 + s * (c[2] / 3.0 + s * c[3] / 4.0)));
}

inline std::array<double, 4> cubic_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd a(n, 4);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double xi = x[static_cast<std::size_t>(i)];
    a(i, 0) = 1.0;
    a(i, 1) = xi;
    a(i, 2) = xi * xi;
    a(i, 3) = xi * xi * xi;
    b(i) = y[static_cast<std::size_t>(i)];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < 4) throw NumericalError("BD-rate: degenerate cubic fit");
  Eigen::VectorXd c = qr.solve(b);
  return {c(0), c(1), c(2), c(3)};
}

// Integral of the shape-preserving piecewise cubic Hermite interpolant of
// (x, y) over [lo, hi]. x must be strictly increasing.
inline double pchip_integral(const std::vector<double>& x, const std::vector<double>& y, double lo, double hi) {
  const std::size_t n = x.size();
  std::vector<double> h(n - 1), delta(n - 1), d(n);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    h[k] = x[k + 1] - x[k];
    if (h[k] <= 0.0) throw NumericalError("BD-rate: quality values must be strictly increasing");
    delta[k] = (y[k + 1] - y[k]) / h[k];
  }
  auto sign = [](double v) { return (v > 0) - (v < 0); };
  for (std::size_t k = 1; k + 1 < n; ++k) {
    if (sign(delta[k - 1]) * sign(delta[k]) <= 0) {
      d[k] = 0.0;
    } else {
      const double w1 = 2.0 * h[k] + h[k - 1], w2 = h[k] + 2.0 * h[k - 1];
      d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
    }
  }
  auto edge = [&](double h0, double h1, double m0, double m1) {
    double dd = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if (sign(dd) != sign(m0)) dd = 0.0;
    else if (sign(m0) != sign(m1) && std::abs(dd) > 3.0 * std::abs(m0)) dd = 3.0 * m0;
    return dd;
  };
  if (n == 2) {
    d[0] = d[1] = delta[0];
  } else {
    d[0] = edge(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = edge(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
  }
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double a = std::max(lo, x[k]), b = std::min(hi, x[k + 1]);
    if (b <= a) continue;
    const std::array<double, 4> c = {y[k], d[k], (3.0 * delta[k] - 2.0 * d[k] - d[k + 1]) / h[k],
                                     (d[k] + d[k + 1] - 2.0 * delta[k]) / (h[k] * h[k])};
    total += poly_integral(c, b - x[k]) - poly_integral(c, a - x[k]);
  }
  return total;
}

}  // namespace bd_detail

// Average bit-rate difference (percent) of `test` relative to `anchor` at
// equal quality. Negative values mean `test` needs fewer bits.
inline double bdbr(const RDCurve& anchor, const RDCurve& test, Quality quality,
                   BdMethod method = BdMethod::cubic_fit) {
  if (anchor.size() < 4 || test.size() < 4) throw ConfigError("BD-rate needs at least 4 points per curve");
  auto split = [&](const RDCurve& c, std::vector<double>& q, std::vector<double>& r) {
    std::vector<RDPoint> pts = c;
    auto qual = [&](const RDPoint& p) { return quality == Quality::psnr ? p.psnr : p.msssim; };
    std::sort(pts.begin(), pts.end(), [&](const RDPoint& a, const RDPoint& b) { return qual(a) < qual(b); });
    for (const auto& p : pts) {
      if (!(p.bpp > 0.0)) throw ConfigError("BD-rate needs positive rates");
      q.push_back(qual(p));
      r.push_back(std::log10(p.bpp));
    }
  };
  std::vector<double> q1, r1, q2, r2;
  split(anchor, q1, r1);
  split(test, q2, r2);
  const double lo = std::max(q1.front(), q2.front());
  const double hi = std::min(q1.back(), q2.back());
  if (!(hi > lo)) throw NumericalError("BD-rate: quality ranges do not overlap");

  double int1, int2;
  if (method == BdMethod::cubic_fit) {
    const auto p1 = bd_detail::cubic_fit(q1, r1);
    const auto p2 = bd_detail::cubic_fit(q2, r2);
    int1 = bd_detail::poly_integral(p1, hi) - bd_detail::poly_integral(p1, lo);
    int2 = bd_detail::poly_integral(p2, hi) - bd_detail::poly_integral(p2, lo);
  } else {
    int1 = bd_detail::pchip_integral(q1, r1, lo, hi);
    int2 = bd_detail::pchip_integral(q2, r2, lo, hi);
  }
  const double avg = (int2 - int1) / (hi - lo);
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

inline void write_rd_csv(const std::string& path, const RDCurve& curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "bpp,psnr,msssim\n";
  out.precision(17);
  for (const auto& p : curve) out << p.bpp << ',' << p.psnr << ',' << p.msssim << '\n';
}

inline RDCurve read_rd_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  RDCurve c;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("bpp", 0) == 0) continue;
    std::stringstream ss(line);
    std::string f;
    std::vector<double> v;
    while (std::getline(ss, f, ',')) {
      try {
        v.push_back(std::stod(f));
      } catch (const std::exception&) {
        throw FormatError("bad RD csv line: " + line);
      }
    }
    if (v.size() != 3) throw FormatError("RD csv needs bpp,psnr,msssim: " + line);
    c.push_back({v[0], v[1], v[2]});
  }
  return c;
}

}  // namespace canerv
