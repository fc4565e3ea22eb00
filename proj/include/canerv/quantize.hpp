#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "canerv/common.hpp"

namespace canerv {

// Per-tensor min-max affine quantization: value = offset + code * scale.
struct QuantizedTensor {
  std::vector<std::uint32_t> codes;
  double scale = 0.0;
  double offset = 0.0;
  int bits = 6;
  std::vector<int> shape;
  std::string tensor_id;

  std::uint32_t levels() const { return std::uint32_t{1} << bits; }
};

inline void check_bits(int bits) {
  if (bits < 2 || bits > 16) throw ConfigError("quantization bits must be in [2,16], got " + std::to_string(bits));
}

// Quantizes against a given [lo, hi] range; values outside are clamped.
inline QuantizedTensor quantize_with_range(std::span<const double> values, double lo, double hi, int bits) {
  check_bits(bits);
  QuantizedTensor q;
  q.bits = bits;
  q.offset = lo;
  const double max_code = static_cast<double>((std::uint32_t{1} << bits) - 1);
  q.scale = hi > lo ? (hi - lo) / max_code : 0.0;
  q.codes.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw NumericalError("cannot quantize a non-finite value");
    if (q.scale == 0.0) {
      q.codes[i] = 0;
      continue;
    }
    const double c = round_half_away((values[i] - lo) / q.scale);
    q.codes[i] = static_cast<std::uint32_t>(std::clamp(c, 0.0, max_code));
  }
  return q;
}

inline QuantizedTensor quantize_tensor(std::span<const double> values, int bits) {
  check_bits(bits);
  double lo = 0.0, hi = 0.0;
  if (!values.empty()) {
    lo = hi = values[0];
    for (double v : values) {
      if (!std::isfinite(v)) throw NumericalError("cannot quantize a non-finite value");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  return quantize_with_range(values, lo, hi, bits);
}

inline double dequantize_code(const QuantizedTensor& q, std::uint32_t code) {
  return q.offset + static_cast<double>(code) * q.scale;
}

inline std::vector<double> dequantize(const QuantizedTensor& q) {
  std::vector<double> out(q.codes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dequantize_code(q, q.codes[i]);
  return out;
}

// quantize -> dequantize in place (the fake-quantization used in training).
inline void fake_quantize(std::vector<double>& values, double lo, double hi, int bits) {
  const QuantizedTensor q = quantize_with_range(values, lo, hi, bits);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = dequantize_code(q, q.codes[i]);
}

}  // namespace canerv
