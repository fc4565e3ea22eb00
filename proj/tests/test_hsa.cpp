#include <gtest/gtest.h>

#include <set>
#include <utility>

#include "support.hpp"

using namespace canerv;
using namespace canerv::testing;

namespace {

FeatureMap gray_rgb(int h, int w, double v = 0.0) { return FeatureMap(3, h, w, v); }

void fill_rgb(FeatureMap& f, int y0, int y1, int x0, int x1, double v) {
  for (int k = 0; k < 3; ++k)
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) f.at(k, y, x) = v;
}

std::set<std::pair<int, int>> positives(const FeatureMap& m) {
  std::set<std::pair<int, int>> s;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x)
      if (m.at(0, y, x) != 0.0) s.insert({y, x});
  return s;
}

}  // namespace

// Reference edge sets below come from tests/oracles/canny_oracle.py (OpenCV).

TEST(Canny, SharpStepGivesSingleColumn) {
  FeatureMap f = gray_rgb(16, 16);
  fill_rgb(f, 0, 16, 8, 16, 1.0);
  const auto e = positives(canny_map(f, 0.1, 0.2));
  std::set<std::pair<int, int>> expect;
  for (int y = 0; y < 16; ++y) expect.insert({y, 7});
  EXPECT_EQ(e, expect);
}

TEST(Canny, FaintStepBelowLowThresholdIsEmpty) {
  FeatureMap f = gray_rgb(16, 16);
  fill_rgb(f, 0, 16, 8, 16, 0.02);
  EXPECT_TRUE(positives(canny_map(f, 0.1, 0.2)).empty());
}

TEST(Canny, SquareMatchesReference) {
  FeatureMap f = gray_rgb(24, 24, 0.2);
  fill_rgb(f, 6, 18, 5, 17, 0.8);
  const std::set<std::pair<int, int>> expect = {
      {5, 8},   {5, 9},   {5, 10},  {5, 11},  {5, 12},  {5, 13},  {6, 5},   {6, 6},   {6, 7},   {6, 14},  {6, 15},
      {6, 16},  {7, 5},   {7, 16},  {8, 5},   {8, 16},  {9, 4},   {9, 16},  {10, 4},  {10, 16}, {11, 4},  {11, 16},
      {12, 4},  {12, 16}, {13, 4},  {13, 16}, {14, 4},  {14, 16}, {15, 5},  {15, 16}, {16, 5},  {16, 16}, {17, 5},
      {17, 6},  {17, 7},  {17, 8},  {17, 9},  {17, 10}, {17, 11}, {17, 12}, {17, 13}, {17, 14}, {17, 15}, {17, 16}};
  EXPECT_EQ(positives(canny_map(f, 0.1, 0.2)), expect);
}

TEST(Canny, RampWithStepKeepsOnlyTheStep) {
  FeatureMap f = gray_rgb(12, 20);
  for (int k = 0; k < 3; ++k)
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 20; ++x) f.at(k, y, x) = x / 19.0 + (x >= 10 ? 0.5 : 0.0);
  std::set<std::pair<int, int>> expect;
  for (int y = 0; y < 12; ++y) expect.insert({y, 9});
  EXPECT_EQ(positives(canny_map(f, 0.3, 0.6)), expect);
}

TEST(Canny, OutputIsBinaryAndConstantImageEmpty) {
  const auto m = canny_map(fixture_frame(3, 32, 32), 0.05, 0.1);
  for (double v : m.data) EXPECT_TRUE(v == 0.0 || v == 1.0);
  EXPECT_TRUE(positives(canny_map(gray_rgb(8, 8, 0.4), 0.1, 0.2)).empty());
}

TEST(Canny, RejectsBadThresholds) {
  EXPECT_THROW(canny_map(gray_rgb(8, 8), 0.3, 0.2), ConfigError);
  EXPECT_THROW(canny_map(gray_rgb(8, 8), -0.1, 0.2), ConfigError);
}

TEST(Laplacian, KnownValues) {
  FeatureMap f = gray_rgb(5, 5);
  fill_rgb(f, 2, 3, 2, 3, 1.0);
  const auto l = laplacian_map(f);
  EXPECT_NEAR(l.at(0, 2, 2), -4.0, 1e-12);
  EXPECT_NEAR(l.at(0, 1, 2), 1.0, 1e-12);
  EXPECT_NEAR(l.at(0, 1, 1), 0.0, 1e-12);
  // Linear ramps have zero curvature away from the border.
  FeatureMap r = gray_rgb(6, 6);
  for (int k = 0; k < 3; ++k)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) r.at(k, y, x) = 0.1 * x + 0.05 * y;
  const auto lr = laplacian_map(r);
  for (int y = 1; y < 5; ++y)
    for (int x = 1; x < 5; ++x) EXPECT_NEAR(lr.at(0, y, x), 0.0, 1e-12);
}

TEST(Gray, LumaWeights) {
  FeatureMap f(3, 1, 1);
  f.data = {1.0, 0.0, 0.0};
  EXPECT_NEAR(to_gray(f).data[0], 0.299, 1e-15);
  f.data = {0.2, 0.4, 0.6};
  EXPECT_NEAR(to_gray(f).data[0], 0.299 * 0.2 + 0.587 * 0.4 + 0.114 * 0.6, 1e-15);
}

TEST(HsaTargets, PooledToAttachmentResolution) {
  FeatureMap f = gray_rgb(16, 16);
  fill_rgb(f, 0, 16, 8, 16, 1.0);
  HsaConfig cfg;
  const auto t = make_hsa_targets(f, cfg, 2);
  ASSERT_EQ(t.edge.h, 8);
  ASSERT_EQ(t.lap.w, 8);
  // Column 7 maps to pooled column 3 (max pooling keeps the edge).
  for (int y = 0; y < 8; ++y) {
    EXPECT_EQ(t.edge.at(0, y, 3), 1.0);
    EXPECT_EQ(t.edge.at(0, y, 4), 0.0);
  }
}

TEST(HsaBranch, ZeroBranchIsIdentity) {
  auto cfg = tiny_architecture();
  const TrainedModel base = build_network(cfg, 2);
  cfg.hsa.enabled = true;
  const TrainedModel with = build_network(cfg, 2);
  for (int t = 0; t < cfg.num_frames; ++t) EXPECT_EQ(forward(base, t).data, forward(with, t).data);
}

TEST(HsaBranch, AddsOnlyOneCompressedConv) {
  auto cfg = tiny_architecture();
  const TrainedModel base = build_network(cfg, 2);
  cfg.hsa.enabled = true;
  const TrainedModel with = build_network(cfg, 2);
  const int c = cfg.channels_out(cfg.num_layers - 1);
  EXPECT_EQ(count_params(with, true) - count_params(base, true), conv_param_count(c, c, 3, true));
  // The two 1x1 heads are present but not compressible.
  EXPECT_EQ(count_params(with, false) - count_params(with, true), 2 * conv_param_count(1, c, 1, true));
}

TEST(HsaBranch, ChannelMismatchThrows) {
  Tensor w({4, 4, 3, 3}), b({4}), h1({1, 4, 1, 1}), hb({1});
  const HsaLayerView view{&w, &b, &h1, &hb, &h1, &hb};
  EXPECT_THROW(hsa_forward(view, FeatureMap(3, 8, 8)), ConfigError);
  EXPECT_THROW(hsa_forward(view, FeatureMap(4, 2, 8)), ConfigError);
  EXPECT_NO_THROW(hsa_forward(view, FeatureMap(4, 8, 8)));
}

TEST(HsaLoss, KnownValues) {
  FeatureMap p1(1, 1, 2), p2(1, 1, 2), e(1, 1, 2), l(1, 1, 2);
  p1.data = {0.0, 0.0};
  e.data = {1.0, 0.0};
  p2.data = {0.5, -0.5};
  l.data = {0.0, 0.0};
  const auto v = hsa_loss(p1, p2, e, l, 0.1, 0.1, false);
  EXPECT_NEAR(v.edge, std::log(2.0), 1e-15);
  EXPECT_NEAR(v.lap, 0.25, 1e-15);
  EXPECT_NEAR(v.total, 0.1 * std::log(2.0) + 0.025, 1e-15);
  // Large logits stay finite.
  p1.data = {800.0, -800.0};
  e.data = {0.0, 1.0};
  const auto big = hsa_loss(p1, p2, e, l, 1.0, 0.0, false);
  EXPECT_TRUE(std::isfinite(big.edge));
  EXPECT_NEAR(big.edge, 800.0, 1e-9);
}
