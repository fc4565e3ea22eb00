#include <gtest/gtest.h>

#include <numeric>

#include "support.hpp"

using namespace canerv;
using namespace canerv::testing;

// ---------------------------------------------------------------------------
// Quantization

TEST(Quantize, SixBitHalfway) {
  const std::vector<double> v = {0.0, 0.5, 1.0};
  const auto q = quantize_tensor(v, 6);
  EXPECT_EQ(q.codes, (std::vector<std::uint32_t>{0, 32, 63}));
  EXPECT_DOUBLE_EQ(q.scale, 1.0 / 63.0);
  EXPECT_NEAR(dequantize(q)[1], 32.0 / 63.0, 1e-15);
}

TEST(Quantize, TwoBitLevelsAreExact) {
  const std::vector<double> v = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  const auto q = quantize_tensor(v, 2);
  EXPECT_EQ(q.codes, (std::vector<std::uint32_t>{0, 1, 2, 3}));
  const auto d = dequantize(q);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(d[i], v[i], 1e-15);
}

TEST(Quantize, HalfCodesRoundAwayFromZero) {
  const std::vector<double> v = {0.0, 0.5, 1.5, 2.5, 3.0};
  EXPECT_EQ(quantize_tensor(v, 2).codes, (std::vector<std::uint32_t>{0, 1, 2, 3, 3}));
}

TEST(Quantize, ConstantTensorHasZeroScale) {
  const std::vector<double> v(17, -0.25);
  const auto q = quantize_tensor(v, 6);
  EXPECT_EQ(q.scale, 0.0);
  for (auto c : q.codes) EXPECT_EQ(c, 0u);
  for (double d : dequantize(q)) EXPECT_EQ(d, -0.25);
}

TEST(Quantize, ErrorIsAtMostHalfStep) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int bits = 2 + static_cast<int>(rng.below(15));
    std::vector<double> v(1 + rng.below(500));
    const double spread = std::pow(10.0, rng.uniform(-6, 3));
    for (double& x : v) x = (trial % 2 ? rng.normal() : rng.uniform(-1, 1)) * spread;
    const auto q = quantize_tensor(v, bits);
    const auto d = dequantize(q);
    for (std::size_t i = 0; i < v.size(); ++i) ASSERT_LE(std::abs(v[i] - d[i]), q.scale / 2 + 1e-12);
  }
}

TEST(Quantize, FakeQuantizeIsIdempotent) {
  std::vector<double> v = {-0.3, 0.11, 0.2, 0.7};
  fake_quantize(v, -0.3, 0.7, 4);
  const auto once = v;
  fake_quantize(v, -0.3, 0.7, 4);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], once[i], 1e-15);
}

TEST(Quantize, RangeClampsOutliers) {
  const std::vector<double> v = {-5.0, 0.5, 5.0};
  const auto q = quantize_with_range(v, 0.0, 1.0, 3);
  EXPECT_EQ(q.codes, (std::vector<std::uint32_t>{0, 4, 7}));
}

TEST(Quantize, Errors) {
  const std::vector<double> v = {0.0, 1.0};
  EXPECT_THROW(quantize_tensor(v, 1), ConfigError);
  EXPECT_THROW(quantize_tensor(v, 17), ConfigError);
  const std::vector<double> bad = {0.0, std::nan("")};
  EXPECT_THROW(quantize_tensor(bad, 6), NumericalError);
  const std::vector<double> inf = {0.0, HUGE_VAL};
  EXPECT_THROW(quantize_tensor(inf, 6), NumericalError);
}

// ---------------------------------------------------------------------------
// Range coder

namespace {

std::vector<std::uint32_t> random_stream(Rng& rng, std::size_t n, std::uint32_t alphabet, int shape) {
  std::vector<std::uint32_t> s(n);
  for (auto& x : s) {
    switch (shape) {
      case 0:
        x = static_cast<std::uint32_t>(rng.below(alphabet));
        break;
      case 1: {  // geometric-like skew
        std::uint32_t k = 0;
        while (k + 1 < alphabet && rng.uniform() < 0.6) ++k;
        x = k;
        break;
      }
      default:  // mostly one symbol
        x = rng.uniform() < 0.97 ? alphabet / 2 : static_cast<std::uint32_t>(rng.below(alphabet));
    }
  }
  return s;
}

}  // namespace

TEST(RangeCoder, RandomStreamsRoundTrip) {
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    const auto alphabet = static_cast<std::uint32_t>(1 + rng.below(64));
    const std::size_t n = rng.below(3000);
    const auto s = random_stream(rng, n, alphabet, i % 3);
    const auto enc = arith_encode(s, alphabet);
    ASSERT_EQ(arith_decode(enc.bytes, enc.table, n), s) << "stream " << i;
  }
}

TEST(RangeCoder, IidPayloadNearEntropy) {
  Rng rng(7);
  for (std::size_t n : {10000u, 40000u}) {
    for (std::uint32_t alphabet : {2u, 5u, 16u, 64u}) {
      for (int shape = 0; shape < 3; ++shape) {
        const auto s = random_stream(rng, n, alphabet, shape);
        const auto enc = arith_encode(s, alphabet);
        const double h = empirical_entropy_bits(s, alphabet);
        EXPECT_LE(8.0 * enc.bytes.size(), h * 1.02 + 64) << "n=" << n << " alphabet=" << alphabet;
        EXPECT_EQ(arith_decode(enc.bytes, enc.table, n), s);
      }
    }
  }
}

TEST(RangeCoder, BinarySourceKnownEntropy) {
  // 900 zeros and 100 ones: H(0.9) = 0.4690 bits/symbol.
  std::vector<std::uint32_t> s(1000, 0);
  std::fill(s.begin(), s.begin() + 100, 1);
  Rng rng(3);
  rng.shuffle(s);
  const auto enc = arith_encode(s, 2);
  EXPECT_NEAR(empirical_entropy_bits(s, 2), 468.996, 1e-3);
  EXPECT_LE(8.0 * enc.bytes.size(), 469.0 + 32.0);
  EXPECT_EQ(enc.table.freq, (std::vector<std::uint32_t>{901, 101}));
}

TEST(RangeCoder, LongStreamRescalesTable) {
  Rng rng(9);
  const auto s = random_stream(rng, 100000, 4, 1);
  const auto enc = arith_encode(s, 4);
  EXPECT_LE(enc.table.total(), 65536u);
  for (auto f : enc.table.freq) EXPECT_GE(f, 1u);
  EXPECT_EQ(arith_decode(enc.bytes, enc.table, s.size()), s);
}

TEST(RangeCoder, EdgeCases) {
  const std::vector<std::uint32_t> empty;
  const auto e = arith_encode(empty, 8);
  EXPECT_TRUE(e.bytes.empty());
  EXPECT_TRUE(arith_decode(e.bytes, e.table, 0).empty());
  // A single-symbol alphabet costs nothing.
  const std::vector<std::uint32_t> ones(500, 0);
  const auto o = arith_encode(ones, 1);
  EXPECT_TRUE(o.bytes.empty());
  EXPECT_EQ(arith_decode(o.bytes, o.table, 500), ones);
}

TEST(RangeCoder, Errors) {
  const std::vector<std::uint32_t> s = {0, 1, 5};
  EXPECT_THROW(arith_encode(s, 4), ConfigError);
  EXPECT_THROW(arith_encode(s, 0), ConfigError);
  FrequencyTable bad;
  bad.freq = {3, 0, 2};
  const std::vector<std::uint8_t> bytes = {1, 2, 3};
  EXPECT_THROW(arith_decode(bytes, bad, 3), FormatError);
}

// ---------------------------------------------------------------------------
// Bitstream

namespace {

TrainedModel trained_tiny(bool dfa, bool hsa, int channels = 4) {
  auto cfg = tiny_architecture();
  cfg.base_channels = channels;
  cfg.extra_depths = {0, 1};
  cfg.dfa.enabled = dfa;
  cfg.hsa.enabled = hsa;
  TrainedModel m = build_network(cfg, 1);
  randomize(m, 77, 0.2);
  return m;
}

}  // namespace

TEST(Bitstream, CodesSurviveSerialization) {
  for (bool dfa : {false, true}) {
    const TrainedModel m = trained_tiny(dfa, true);
    const Bitstream bs = serialize(m);
    const DecodedStream d = deserialize(bs.bytes);
    ASSERT_EQ(d.tensors.size(), bs.tensors.size());
    for (std::size_t i = 0; i < d.tensors.size(); ++i) {
      EXPECT_EQ(d.tensors[i].q.tensor_id, bs.tensors[i].q.tensor_id);
      EXPECT_EQ(d.tensors[i].q.codes, bs.tensors[i].q.codes);
      EXPECT_EQ(d.tensors[i].q.scale, bs.tensors[i].q.scale);
      EXPECT_EQ(d.tensors[i].q.offset, bs.tensors[i].q.offset);
      EXPECT_EQ(d.tensors[i].q.shape, bs.tensors[i].q.shape);
      EXPECT_EQ(d.tensors[i].mode, bs.tensors[i].mode);
    }
    EXPECT_EQ(serialize_config(d.config), serialize_config(m.config));
  }
}

TEST(Bitstream, DecodeIsBitIdenticalToQuantizedForward) {
  const TrainedModel m = trained_tiny(true, true);
  const TrainedModel q = quantized_model(m);
  const VideoSequence dec = deserialize_and_decode(serialize(m).bytes);
  ASSERT_EQ(dec.num_frames(), m.config.num_frames);
  for (int t = 0; t < dec.num_frames(); ++t) EXPECT_EQ(dec.frames[static_cast<std::size_t>(t)].data, forward(q, t).data);
}

TEST(Bitstream, SingleFrameMatchesFullDecode) {
  const Bitstream bs = serialize(trained_tiny(true, false));
  const VideoSequence all = deserialize_and_decode(bs.bytes);
  for (int t = 0; t < all.num_frames(); ++t) {
    const VideoSequence one = deserialize_and_decode(bs.bytes, t);
    ASSERT_EQ(one.num_frames(), 1);
    EXPECT_EQ(one.frames[0].data, all.frames[static_cast<std::size_t>(t)].data);
  }
  EXPECT_THROW(deserialize_and_decode(bs.bytes, 3), ConfigError);
  EXPECT_THROW(deserialize_and_decode(bs.bytes, -1), ConfigError);
}

TEST(Bitstream, HeadsAreNotTransmitted) {
  const TrainedModel m = trained_tiny(true, true);
  const Bitstream bs = serialize(m);
  std::size_t compressible = 0;
  for (const auto& p : m.params) compressible += p.compressible ? 1 : 0;
  EXPECT_EQ(bs.tensors.size(), compressible);
  bool saw_dfa = false;
  for (const auto& t : bs.tensors) {
    EXPECT_EQ(t.q.tensor_id.find("head1"), std::string::npos);
    EXPECT_EQ(t.q.tensor_id.find("head2"), std::string::npos);
    saw_dfa = saw_dfa || t.q.tensor_id.find(".dfa.") != std::string::npos;
  }
  EXPECT_TRUE(saw_dfa);
}

TEST(Bitstream, SizeAccounting) {
  const Bitstream bs = serialize(trained_tiny(false, false, 16));
  std::size_t payload = 0;
  bool raw = false, arith = false;
  for (const auto& t : bs.tensors) {
    payload += t.payload_bytes;
    raw = raw || t.mode == PayloadMode::raw;
    arith = arith || t.mode == PayloadMode::arithmetic;
  }
  EXPECT_EQ(bs.header_bytes + payload, bs.bytes.size());
  EXPECT_EQ(bs.total_bits(), bs.bytes.size() * 8);
  // Tiny bias vectors go raw; large weight tensors are entropy coded.
  EXPECT_TRUE(raw);
  EXPECT_TRUE(arith);
}

TEST(Bitstream, FrozenRangesAreHonoured) {
  TrainedModel m = trained_tiny(false, false);
  auto& p = m.params[static_cast<std::size_t>(m.find("head_out.w"))];
  p.frozen_range = QuantRange{-1.0, 1.0, 4};
  const Bitstream bs = serialize(m);
  for (const auto& t : bs.tensors)
    if (t.q.tensor_id == "head_out.w") {
      EXPECT_EQ(t.q.bits, 4);
      EXPECT_EQ(t.q.offset, -1.0);
      EXPECT_DOUBLE_EQ(t.q.scale, 2.0 / 15.0);
    }
  const VideoSequence dec = deserialize_and_decode(bs.bytes);
  EXPECT_EQ(dec.frames[1].data, forward(quantized_model(m), 1).data);
}

TEST(Bitstream, CorruptionIsDetected) {
  const Bitstream bs = serialize(trained_tiny(false, false));
  EXPECT_NO_THROW(deserialize(bs.bytes));
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    auto b = bs.bytes;
    b[rng.below(b.size())] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    EXPECT_THROW(deserialize(b), FormatError);
  }
  for (std::size_t len : {std::size_t{0}, std::size_t{3}, std::size_t{20}, bs.bytes.size() - 1}) {
    std::vector<std::uint8_t> b(bs.bytes.begin(), bs.bytes.begin() + static_cast<std::ptrdiff_t>(len));
    EXPECT_THROW(deserialize(b), FormatError);
  }
  auto magic = bs.bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize(magic), FormatError);
}

TEST(Bitstream, UnknownVersionRejected) {
  auto b = serialize(trained_tiny(false, false)).bytes;
  b[4] = 9;
  const std::uint32_t crc = bs_detail::crc32_of(std::span<const std::uint8_t>(b).first(b.size() - 4));
  for (int i = 0; i < 4; ++i) b[b.size() - 4 + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(crc >> (8 * i));
  try {
    deserialize(b);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Bitstream, BitPackingRoundTrip) {
  Rng rng(4);
  for (int bits = 2; bits <= 16; ++bits) {
    std::vector<std::uint32_t> codes(1 + rng.below(300));
    for (auto& c : codes) c = static_cast<std::uint32_t>(rng.below(1u << bits));
    const auto packed = bs_detail::pack_bits(codes, bits);
    EXPECT_EQ(packed.size(), (codes.size() * static_cast<std::size_t>(bits) + 7) / 8);
    EXPECT_EQ(bs_detail::unpack_bits(packed, codes.size(), bits), codes);
  }
}

TEST(Bitstream, FileRoundTrip) {
  TempDir dir("bits");
  const Bitstream bs = serialize(trained_tiny(false, true));
  write_binary_file(dir.str("a.cnrv"), bs.bytes);
  EXPECT_EQ(read_binary_file(dir.str("a.cnrv")), bs.bytes);
  EXPECT_THROW(read_binary_file(dir.str("missing.cnrv")), IoError);
  EXPECT_THROW(write_binary_file(dir.str("no/such/dir/x.cnrv"), bs.bytes), IoError);
}

TEST(Bitstream, SerializationIsDeterministic) {
  EXPECT_EQ(serialize(trained_tiny(true, true)).bytes, serialize(trained_tiny(true, true)).bytes);
}
