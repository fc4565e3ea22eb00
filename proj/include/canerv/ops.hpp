#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "canerv/common.hpp"

namespace canerv::ops {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

// Column buffer for a k x k "same" convolution with zero padding:
// row (ci*k + ky)*k + kx, column y*W + x.
inline RowMatrix im2col(const FeatureMap& in, int k) {
  const int pad = k / 2;
  const int hw = in.h * in.w;
  RowMatrix cols(static_cast<Eigen::Index>(in.c) * k * k, hw);
  for (int ci = 0; ci < in.c; ++ci) {
    const double* src = in.channel(ci);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.row((static_cast<Eigen::Index>(ci) * k + ky) * k + kx).data();
        for (int y = 0; y < in.h; ++y) {
          const int sy = y + ky - pad;
          double* dst = row + static_cast<std::size_t>(y) * in.w;
          if (sy < 0 || sy >= in.h) {
            std::fill(dst, dst + in.w, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::size_t>(sy) * in.w;
          for (int x = 0; x < in.w; ++x) {
            const int sx = x + kx - pad;
            dst[x] = (sx >= 0 && sx < in.w) ? srow[sx] : 0.0;
          }
        }
      }
  }
  return cols;
}

inline void col2im_add(const RowMatrix& cols, int k, FeatureMap& out) {
  const int pad = k / 2;
  for (int ci = 0; ci < out.c; ++ci) {
    double* dst = out.channel(ci);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols.row((static_cast<Eigen::Index>(ci) * k + ky) * k + kx).data();
        for (int y = 0; y < out.h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= out.h) continue;
          const double* src = row + static_cast<std::size_t>(y) * out.w;
          double* drow = dst + static_cast<std::size_t>(sy) * out.w;
          for (int x = 0; x < out.w; ++x) {
            const int sx = x + kx - pad;
            if (sx >= 0 && sx < out.w) drow[sx] += src[x];
          }
        }
      }
  }
}

// Weight layout [cout, cin, k, k]; bias may be null.
inline FeatureMap conv2d(const FeatureMap& in, const double* weight, const double* bias, int cout,
                         int k) {
  FeatureMap out(cout, in.h, in.w);
  const Eigen::Index hw = static_cast<Eigen::Index>(in.h) * in.w;
  const Eigen::Index kin = static_cast<Eigen::Index>(in.c) * k * k;
  ConstMatMap w(weight, cout, kin);
  MatMap o(out.data.data(), cout, hw);
  if (k == 1) {
    o.noalias() = w * ConstMatMap(in.data.data(), in.c, hw);
  } else {
    RowMatrix cols = im2col(in, k);
    o.noalias() = w * cols;
  }
  if (bias)
    for (int co = 0; co < cout; ++co) o.row(co).array() += bias[co];
  return out;
}

// Accumulates weight/bias gradients; writes the input gradient when din != null.
inline void conv2d_backward(const FeatureMap& in, const double* weight, int cout, int k,
                            const FeatureMap& dout, double* dweight, double* dbias,
                            FeatureMap* din) {
  const Eigen::Index hw = static_cast<Eigen::Index>(in.h) * in.w;
  const Eigen::Index kin = static_cast<Eigen::Index>(in.c) * k * k;
  ConstMatMap w(weight, cout, kin);
  ConstMatMap go(dout.data.data(), cout, hw);
  if (dbias)
    for (int co = 0; co < cout; ++co) dbias[co] += go.row(co).sum();
  if (k == 1) {
    ConstMatMap x(in.data.data(), in.c, hw);
    if (dweight) MatMap(dweight, cout, kin).noalias() += go * x.transpose();
    if (din) {
      *din = FeatureMap(in.c, in.h, in.w);
      MatMap(din->data.data(), in.c, hw).noalias() = w.transpose() * go;
    }
    return;
  }
  if (dweight) {
    RowMatrix cols = im2col(in, k);
    MatMap(dweight, cout, kin).noalias() += go * cols.transpose();
  }
  if (din) {
    RowMatrix dcols = w.transpose() * go;
    *din = FeatureMap(in.c, in.h, in.w);
    col2im_add(dcols, k, *din);
  }
}

// Sub-pixel rearrangement: channel c*f*f + i*f + j at (y, x) moves to
// channel c at (y*f + i, x*f + j).
inline FeatureMap pixel_shuffle(const FeatureMap& in, int f) {
  if (f == 1) return in;
  const int c = in.c / (f * f);
  FeatureMap out(c, in.h * f, in.w * f);
  for (int k = 0; k < c; ++k)
    for (int i = 0; i < f; ++i)
      for (int j = 0; j < f; ++j) {
        const double* src = in.channel(k * f * f + i * f + j);
        for (int y = 0; y < in.h; ++y)
          for (int x = 0; x < in.w; ++x)
            out.at(k, y * f + i, x * f + j) = src[static_cast<std::size_t>(y) * in.w + x];
      }
  return out;
}

inline FeatureMap pixel_unshuffle(const FeatureMap& in, int f) {
  if (f == 1) return in;
  const int h = in.h / f, w = in.w / f;
  FeatureMap out(in.c * f * f, h, w);
  for (int k = 0; k < in.c; ++k)
    for (int i = 0; i < f; ++i)
      for (int j = 0; j < f; ++j) {
        double* dst = out.channel(k * f * f + i * f + j);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            dst[static_cast<std::size_t>(y) * w + x] = in.at(k, y * f + i, x * f + j);
      }
  return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) * (0.5 * M_2_SQRTPI * M_SQRT1_2);
  return cdf + x * pdf;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline FeatureMap apply_gelu(const FeatureMap& in) {
  FeatureMap out = in;
  for (double& v : out.data) v = gelu(v);
  return out;
}

// d(gelu(pre)) given upstream gradient g.
inline FeatureMap gelu_backward(const FeatureMap& pre, const FeatureMap& g) {
  FeatureMap out = g;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= gelu_grad(pre.data[i]);
  return out;
}

inline void add_inplace(FeatureMap& a, const FeatureMap& b) {
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

// f x f pooling over a single-channel map.
inline FeatureMap avg_pool(const FeatureMap& in, int f) {
  if (f == 1) return in;
  FeatureMap out(in.c, in.h / f, in.w / f);
  const double norm = 1.0 / (f * f);
  for (int k = 0; k < in.c; ++k)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        double s = 0.0;
        for (int i = 0; i < f; ++i)
          for (int j = 0; j < f; ++j) s += in.at(k, y * f + i, x * f + j);
        out.at(k, y, x) = s * norm;
      }
  return out;
}

inline FeatureMap max_pool(const FeatureMap& in, int f) {
  if (f == 1) return in;
  FeatureMap out(in.c, in.h / f, in.w / f);
  for (int k = 0; k < in.c; ++k)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        double m = in.at(k, y * f, x * f);
        for (int i = 0; i < f; ++i)
          for (int j = 0; j < f; ++j) m = std::max(m, in.at(k, y * f + i, x * f + j));
        out.at(k, y, x) = m;
      }
  return out;
}

}  // namespace canerv::ops
