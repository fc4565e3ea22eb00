#pragma once

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "canerv/arith_coder.hpp"
#include "canerv/config.hpp"
#include "canerv/network.hpp"
#include "canerv/quantize.hpp"
#include "canerv/video_io.hpp"

namespace canerv {

// .cnrv container. All integers little-endian; see docs/bitstream.md.
constexpr char kMagic[4] = {'C', 'N', 'R', 'V'};
constexpr std::uint16_t kBitstreamVersion = 1;
constexpr int kDefaultBits = 6;

enum class PayloadMode : std::uint8_t { arithmetic = 0, raw = 1 };

struct TensorRecord {
  QuantizedTensor q;
  PayloadMode mode = PayloadMode::arithmetic;
  std::size_t payload_bytes = 0;
  std::size_t header_bytes = 0;  // metadata + frequency table
};

struct Bitstream {
  std::vector<std::uint8_t> bytes;
  std::vector<TensorRecord> tensors;
  std::size_t header_bytes = 0;  // everything outside the per-tensor payloads

  std::size_t total_bits() const { return bytes.size() * 8; }
};

namespace bs_detail {

class Writer {
 public:
  void u8(std::uint8_t v) { buf.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void varint(std::uint32_t v) {
    while (v >= 0x80) {
      buf.push_back(static_cast<std::uint8_t>(v | 0x80));
      v >>= 7;
    }
    buf.push_back(static_cast<std::uint8_t>(v));
  }
  void bytes(std::span<const std::uint8_t> b) { buf.insert(buf.end(), b.begin(), b.end()); }
  void str(const std::string& s) { buf.insert(buf.end(), s.begin(), s.end()); }

  std::vector<std::uint8_t> buf;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw FormatError("truncated bitstream");
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::uint32_t varint() {
    std::uint32_t v = 0;
    for (int shift = 0; shift < 35; shift += 7) {
      const std::uint8_t b = u8();
      v |= static_cast<std::uint32_t>(b & 0x7F) << shift;
      if (!(b & 0x80)) return v;
    }
    throw FormatError("malformed varint");
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str(std::size_t n) {
    auto s = bytes(n);
    return std::string(s.begin(), s.end());
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> b) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, b.data(), static_cast<uInt>(b.size())));
}

inline std::vector<std::uint8_t> pack_bits(const std::vector<std::uint32_t>& codes, int bits) {
  std::vector<std::uint8_t> out((codes.size() * static_cast<std::size_t>(bits) + 7) / 8, 0);
  std::size_t bit = 0;
  for (auto c : codes)
    for (int i = 0; i < bits; ++i, ++bit)
      if ((c >> i) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
  return out;
}

inline std::vector<std::uint32_t> unpack_bits(std::span<const std::uint8_t> in, std::size_t n, int bits) {
  if (in.size() * 8 < n * static_cast<std::size_t>(bits)) throw FormatError("truncated raw payload");
  std::vector<std::uint32_t> out(n, 0);
  std::size_t bit = 0;
  for (auto& c : out)
    for (int i = 0; i < bits; ++i, ++bit)
      if ((in[bit / 8] >> (bit % 8)) & 1u) c |= 1u << i;
  return out;
}

}  // namespace bs_detail

// Quantizes one parameter with its frozen range when present.
inline QuantizedTensor quantize_param(const Param& p, int bits = kDefaultBits) {
  QuantizedTensor q = p.frozen_range
                          ? quantize_with_range(p.value.data, p.frozen_range->min, p.frozen_range->max,
                                                p.frozen_range->bits)
                          : quantize_tensor(p.value.data, bits);
  q.shape = p.value.shape;
  q.tensor_id = p.name;
  return q;
}

// The model the decoder will reconstruct: every compressible tensor replaced
// by its dequantized value.
inline TrainedModel quantized_model(const TrainedModel& m, int bits = kDefaultBits) {
  TrainedModel out = m;
  for (auto& p : out.params) {
    if (!p.compressible) continue;
    p.value.data = dequantize(quantize_param(p, bits));
  }
  return out;
}

inline Bitstream serialize(const TrainedModel& m, int bits = kDefaultBits) {
  using bs_detail::Writer;
  Bitstream bs;
  Writer w;
  w.str(std::string(kMagic, 4));
  w.u16(kBitstreamVersion);
  w.u32(static_cast<std::uint32_t>(m.config.num_frames));
  w.u32(static_cast<std::uint32_t>(m.config.out_height()));
  w.u32(static_cast<std::uint32_t>(m.config.out_width()));
  const std::string cfg = serialize_config(m.config);
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.str(cfg);
  std::uint32_t n = 0;
  for (const auto& p : m.params) n += p.compressible ? 1 : 0;
  w.u32(n);
  std::size_t payload_total = 0;

  for (const auto& p : m.params) {
    if (!p.compressible) continue;
    TensorRecord rec;
    rec.q = quantize_param(p, bits);
    const std::size_t start = w.buf.size();
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.str(p.name);
    w.u8(static_cast<std::uint8_t>(p.value.shape.size()));
    for (int d : p.value.shape) w.u32(static_cast<std::uint32_t>(d));
    w.u8(static_cast<std::uint8_t>(rec.q.bits));
    w.f64(rec.q.scale);
    w.f64(rec.q.offset);

    // Arithmetic coding unless raw packing (no table) is smaller.
    const ArithEncoded ac = arith_encode(rec.q.codes, rec.q.levels());
    Writer table;
    for (auto f : ac.table.freq) table.varint(f - 1);
    const std::vector<std::uint8_t> raw = bs_detail::pack_bits(rec.q.codes, rec.q.bits);
    const bool use_raw = raw.size() <= ac.bytes.size() + table.buf.size();
    rec.mode = use_raw ? PayloadMode::raw : PayloadMode::arithmetic;
    w.u8(static_cast<std::uint8_t>(rec.mode));
    if (!use_raw) w.bytes(table.buf);
    const auto& payload = use_raw ? raw : ac.bytes;
    w.u32(static_cast<std::uint32_t>(payload.size()));
    rec.header_bytes = w.buf.size() - start;
    w.bytes(payload);
    rec.payload_bytes = payload.size();
    payload_total += payload.size();
    bs.tensors.push_back(std::move(rec));
  }
  w.u32(bs_detail::crc32_of(w.buf));
  bs.bytes = std::move(w.buf);
  bs.header_bytes = bs.bytes.size() - payload_total;
  return bs;
}

struct DecodedStream {
  ArchitectureConfig config;
  int frames = 0, height = 0, width = 0;
  std::vector<TensorRecord> tensors;
};

inline DecodedStream deserialize(std::span<const std::uint8_t> bytes) {
  using bs_detail::Reader;
  if (bytes.size() < 4 + 2 + 4) throw FormatError("truncated bitstream");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a CNRV bitstream (bad magic)");
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  if (tail.u32() != bs_detail::crc32_of(body)) throw FormatError("bitstream checksum mismatch");

  Reader r(body);
  r.bytes(4);
  const std::uint16_t version = r.u16();
  if (version != kBitstreamVersion) throw FormatError("unsupported bitstream version " + std::to_string(version));
  DecodedStream d;
  d.frames = static_cast<int>(r.u32());
  d.height = static_cast<int>(r.u32());
  d.width = static_cast<int>(r.u32());
  const std::uint32_t cfg_len = r.u32();
  try {
    d.config = parse_architecture(r.str(cfg_len));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad architecture descriptor: ") + e.what());
  }
  if (d.config.num_frames != d.frames || d.config.out_height() != d.height || d.config.out_width() != d.width)
    throw FormatError("architecture descriptor disagrees with stream dimensions");
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    TensorRecord rec;
    rec.q.tensor_id = r.str(r.u16());
    const int rank = r.u8();
    for (int k = 0; k < rank; ++k) rec.q.shape.push_back(static_cast<int>(r.u32()));
    rec.q.bits = r.u8();
    if (rec.q.bits < 2 || rec.q.bits > 16) throw FormatError("bad bit depth in " + rec.q.tensor_id);
    rec.q.scale = r.f64();
    rec.q.offset = r.f64();
    const std::size_t count = Tensor::count(rec.q.shape);
    const std::uint8_t mode = r.u8();
    if (mode == static_cast<std::uint8_t>(PayloadMode::arithmetic)) {
      rec.mode = PayloadMode::arithmetic;
      FrequencyTable table;
      table.freq.resize(rec.q.levels());
      for (auto& f : table.freq) f = r.varint() + 1;
      const std::uint32_t len = r.u32();
      rec.q.codes = arith_decode(r.bytes(len), table, count);
      rec.payload_bytes = len;
    } else if (mode == static_cast<std::uint8_t>(PayloadMode::raw)) {
      rec.mode = PayloadMode::raw;
      const std::uint32_t len = r.u32();
      rec.q.codes = bs_detail::unpack_bits(r.bytes(len), count, rec.q.bits);
      rec.payload_bytes = len;
    } else {
      throw FormatError("unknown payload mode in " + rec.q.tensor_id);
    }
    d.tensors.push_back(std::move(rec));
  }
  if (r.pos() != body.size()) throw FormatError("trailing bytes in bitstream");
  return d;
}

// Network skeleton from the header, weights from the dequantized codes.
inline TrainedModel rebuild_model(const DecodedStream& d) {
  TrainedModel m = build_network(d.config, 0);
  std::vector<bool> filled(m.params.size(), false);
  for (const auto& rec : d.tensors) {
    const int slot = m.find(rec.q.tensor_id);
    if (slot < 0) throw FormatError("unexpected tensor " + rec.q.tensor_id);
    Param& p = m.params[static_cast<std::size_t>(slot)];
    if (p.value.shape != rec.q.shape) throw FormatError("shape mismatch for " + rec.q.tensor_id);
    p.value.data = dequantize(rec.q);
    filled[static_cast<std::size_t>(slot)] = true;
  }
  for (std::size_t i = 0; i < m.params.size(); ++i)
    if (m.params[i].compressible && !filled[i]) throw FormatError("missing tensor " + m.params[i].name);
  return m;
}

// Decodes all frames, or only `only_frame` when given (other frames are not
// computed).
inline VideoSequence deserialize_and_decode(std::span<const std::uint8_t> bytes,
                                            std::optional<int> only_frame = std::nullopt) {
  const DecodedStream d = deserialize(bytes);
  const TrainedModel m = rebuild_model(d);
  VideoSequence seq;
  seq.name = "decoded";
  if (only_frame) {
    if (*only_frame < 0 || *only_frame >= d.frames)
      throw ConfigError("frame " + std::to_string(*only_frame) + " not in stream");
    seq.frames.push_back(forward(m, *only_frame));
    return seq;
  }
  for (int t = 0; t < d.frames; ++t) seq.frames.push_back(forward(m, t));
  return seq;
}

inline std::vector<std::uint8_t> read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_binary_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace canerv
