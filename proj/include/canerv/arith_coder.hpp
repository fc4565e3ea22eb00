#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "canerv/common.hpp"

namespace canerv {

// Static-model range coder (32-bit range, 64-bit low with delayed carry
// propagation). The symbol model is a frequency table shared by encoder and
// decoder; the encoder derives it from the empirical counts plus one.
//
// Stream conventions: the always-zero leading byte of the classical coder is
// not written, and trailing zero bytes are trimmed; the decoder treats bytes
// past the end as zero.

struct FrequencyTable {
  std::vector<std::uint32_t> freq;  // every entry >= 1

  std::uint32_t alphabet() const { return static_cast<std::uint32_t>(freq.size()); }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto f : freq) t += f;
    return t;
  }
};

namespace rc_detail {

constexpr std::uint32_t kTop = 1u << 24;

inline std::uint64_t total_cap(std::uint32_t alphabet) {
  return std::max<std::uint64_t>(1u << 16, 4ull * alphabet);
}

inline std::vector<std::uint32_t> cumulative(const FrequencyTable& t) {
  std::vector<std::uint32_t> cum(t.freq.size() + 1, 0);
  for (std::size_t i = 0; i < t.freq.size(); ++i) cum[i + 1] = cum[i] + t.freq[i];
  return cum;
}

class Encoder {
 public:
  explicit Encoder(std::vector<std::uint8_t>& out) : out_(out) {}

  void encode(std::uint32_t cum, std::uint32_t freq, std::uint32_t total) {
    const std::uint32_t r = range_ / total;
    low_ += static_cast<std::uint64_t>(r) * cum;
    range_ = r * freq;
    while (range_ < kTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  void finish() {
    // Any value in [low, low + range) identifies the interval; pick the one
    // with the most trailing zero bytes.
    low_ = (low_ + 0xFFFFFFu) & ~std::uint64_t{0xFFFFFF};
    for (int i = 0; i < 5; ++i) shift_low();
    while (!out_.empty() && out_.back() == 0) out_.pop_back();
  }

 private:
  void shift_low() {
    if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const auto carry = static_cast<std::uint8_t>(low_ >> 32);
      std::uint8_t temp = cache_;
      do {
        put(static_cast<std::uint8_t>(temp + carry));
        temp = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = static_cast<std::uint8_t>(static_cast<std::uint32_t>(low_) >> 24);
    }
    ++cache_size_;
    low_ = (low_ & 0x00FFFFFFu) << 8;
  }

  void put(std::uint8_t b) {
    if (skip_first_) {
      skip_first_ = false;
      return;
    }
    out_.push_back(b);
  }

  std::vector<std::uint8_t>& out_;
  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  bool skip_first_ = true;
};

class Decoder {
 public:
  explicit Decoder(std::span<const std::uint8_t> in) : in_(in) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next();
  }

  // Returns the cumulative target; the caller locates the symbol.
  std::uint32_t target(std::uint32_t total) {
    r_ = range_ / total;
    const std::uint32_t v = code_ / r_;
    if (v >= total) throw FormatError("corrupt arithmetic-coded payload");
    return v;
  }

  void consume(std::uint32_t cum, std::uint32_t freq) {
    code_ -= r_ * cum;
    range_ = r_ * freq;
    while (range_ < kTop) {
      code_ = (code_ << 8) | next();
      range_ <<= 8;
    }
  }

 private:
  std::uint32_t next() { return pos_ < in_.size() ? in_[pos_++] : 0u; }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t code_ = 0;
  std::uint32_t r_ = 1;
};

}  // namespace rc_detail

// Laplace-smoothed empirical table, rescaled so the total stays within the
// coder's precision.
inline FrequencyTable build_frequency_table(std::span<const std::uint32_t> symbols, std::uint32_t alphabet) {
  if (alphabet == 0) throw ConfigError("alphabet size must be positive");
  std::vector<std::uint64_t> counts(alphabet, 0);
  for (auto s : symbols) {
    if (s >= alphabet) throw ConfigError("symbol " + std::to_string(s) + " outside alphabet of " + std::to_string(alphabet));
    ++counts[s];
  }
  FrequencyTable t;
  t.freq.resize(alphabet);
  const std::uint64_t cap = rc_detail::total_cap(alphabet);
  const std::uint64_t n = symbols.size();
  if (n + alphabet <= cap) {
    for (std::uint32_t i = 0; i < alphabet; ++i) t.freq[i] = static_cast<std::uint32_t>(counts[i] + 1);
  } else {
    const std::uint64_t budget = cap - alphabet;
    for (std::uint32_t i = 0; i < alphabet; ++i)
      t.freq[i] = static_cast<std::uint32_t>(1 + counts[i] * budget / n);
  }
  return t;
}

struct ArithEncoded {
  std::vector<std::uint8_t> bytes;
  FrequencyTable table;
};

inline std::vector<std::uint8_t> arith_encode_with(std::span<const std::uint32_t> symbols, const FrequencyTable& table) {
  const auto cum = rc_detail::cumulative(table);
  const auto total = static_cast<std::uint32_t>(cum.back());
  if (total > rc_detail::total_cap(table.alphabet())) throw ConfigError("frequency table total too large");
  std::vector<std::uint8_t> out;
  if (symbols.empty()) return out;
  rc_detail::Encoder enc(out);
  for (auto s : symbols) {
    if (s >= table.alphabet()) throw ConfigError("symbol outside alphabet");
    enc.encode(cum[s], table.freq[s], total);
  }
  enc.finish();
  return out;
}

inline ArithEncoded arith_encode(std::span<const std::uint32_t> symbols, std::uint32_t alphabet) {
  ArithEncoded e;
  e.table = build_frequency_table(symbols, alphabet);
  e.bytes = arith_encode_with(symbols, e.table);
  return e;
}

inline std::vector<std::uint32_t> arith_decode(std::span<const std::uint8_t> bytes, const FrequencyTable& table,
                                               std::size_t length) {
  std::vector<std::uint32_t> out;
  out.reserve(length);
  if (length == 0) return out;
  for (auto f : table.freq)
    if (f == 0) throw FormatError("frequency table has a zero entry");
  const auto cum = rc_detail::cumulative(table);
  const auto total = static_cast<std::uint32_t>(cum.back());
  if (total == 0 || total > rc_detail::total_cap(table.alphabet())) throw FormatError("bad frequency table total");
  rc_detail::Decoder dec(bytes);
  for (std::size_t i = 0; i < length; ++i) {
    const std::uint32_t v = dec.target(total);
    const auto it = std::upper_bound(cum.begin(), cum.end(), v);
    const auto s = static_cast<std::uint32_t>(it - cum.begin() - 1);
    dec.consume(cum[s], table.freq[s]);
    out.push_back(s);
  }
  return out;
}

// Empirical zeroth-order entropy in bits for the whole sequence.
inline double empirical_entropy_bits(std::span<const std::uint32_t> symbols, std::uint32_t alphabet) {
  std::vector<std::uint64_t> counts(alphabet, 0);
  for (auto s : symbols) ++counts.at(s);
  double bits = 0.0;
  const double n = static_cast<double>(symbols.size());
  for (auto c : counts)
    if (c) bits -= static_cast<double>(c) * std::log2(static_cast<double>(c) / n);
  return bits;
}

}  // namespace canerv
