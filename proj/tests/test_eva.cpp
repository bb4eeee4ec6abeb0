#include <cmath>

#include <gtest/gtest.h>

#include "support/check.hpp"
#include "v2e/errors.hpp"
#include "v2e/eva.hpp"
#include "v2e/ops.hpp"

using namespace v2e;
using ag::Tensor;

namespace {

Tensor rand_tensor(Rng& rng, ag::Shape shape, double lo = -1, double hi = 1) {
  return Tensor::from(shape, check::uniform_values(rng, static_cast<size_t>(ag::numel_of(shape)), lo, hi));
}

Tensor weighted(const Tensor& y, uint64_t seed) {
  Rng rng(seed);
  return ag::sum(y * Tensor::from(y.shape(), check::uniform_values(rng, static_cast<size_t>(y.numel()), -1, 1)));
}

// Linear interpolation through samples placed at 0..n-1, evaluated at n_out
// evenly spaced points that include both ends.
std::vector<double> stretch(const std::vector<double>& v, size_t n_out) {
  std::vector<double> out(n_out);
  for (size_t i = 0; i < n_out; ++i) {
    const double pos = static_cast<double>(i) * static_cast<double>(v.size() - 1) / static_cast<double>(n_out - 1);
    const size_t lo = std::min(static_cast<size_t>(pos), v.size() - 2);
    const double f = pos - static_cast<double>(lo);
    out[i] = v[lo] * (1 - f) + v[lo + 1] * f;
  }
  return out;
}

}  // namespace

TEST(Eva, ClampKeepsWindowInsideSource) {
  Rng rng(1);
  Tensor raw = rand_tensor(rng, {200, 4}, -3, 3);
  Tensor p = clamp_affine(raw);
  for (int64_t i = 0; i < 200; ++i) {
    AffineParams a{p.at({i, 0}), p.at({i, 1}), p.at({i, 2}), p.at({i, 3})};
    EXPECT_GT(a.scale_x, 0);
    EXPECT_LE(a.scale_x, 1);
    EXPECT_TRUE(a.within_source()) << a.scale_x << " " << a.shift_x;
    EXPECT_EQ(a, a.clamped());
  }
  AffineParams wild{3, -1, 5, -5};
  auto c = wild.clamped();
  EXPECT_EQ(c.scale_x, 1);
  EXPECT_EQ(c.scale_y, AffineParams::kMinScale);
  EXPECT_EQ(c.shift_x, 0);
  EXPECT_NEAR(c.shift_y, -(1 - AffineParams::kMinScale), 1e-15);
}

TEST(Eva, IdentityParamsReproduceInput) {
  Rng rng(2);
  auto values = check::uniform_values(rng, 3 * 7 * 5, -2, 2);
  auto map = FeatureMap::make(3, 7, 5, values);
  auto out = sample_region(map, AffineParams{}, 7, 5);
  double worst = 0;
  for (size_t i = 0; i < values.size(); ++i) worst = std::max(worst, std::abs(out.data[i] - values[i]));
  EXPECT_LT(worst, 1e-6);
}

TEST(Eva, HalfScaleCenterCropMatchesBilinearOracle) {
  Rng rng(3);
  const int64_t c = 2, h = 9, w = 9, oh = 13, ow = 11;
  auto values = check::uniform_values(rng, static_cast<size_t>(c * h * w), -1, 1);
  auto map = FeatureMap::make(c, h, w, values);
  auto out = sample_region(map, AffineParams{0.5, 0.5, 0, 0}, oh, ow);
  // The half-scale centered window covers rows and columns 2..6 exactly.
  double worst = 0;
  for (int64_t ch = 0; ch < c; ++ch) {
    std::vector<std::vector<double>> rows;
    for (int64_t y = 2; y <= 6; ++y) {
      std::vector<double> r;
      for (int64_t x = 2; x <= 6; ++x) r.push_back(map.at(ch, y, x));
      rows.push_back(stretch(r, static_cast<size_t>(ow)));
    }
    for (int64_t x = 0; x < ow; ++x) {
      std::vector<double> col;
      for (const auto& r : rows) col.push_back(r[static_cast<size_t>(x)]);
      const auto up = stretch(col, static_cast<size_t>(oh));
      for (int64_t y = 0; y < oh; ++y) worst = std::max(worst, std::abs(out.at(ch, y, x) - up[static_cast<size_t>(y)]));
    }
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Eva, SampleRegionShiftGradient) {
  Rng rng(4);
  Tensor src = rand_tensor(rng, {2, 3, 6, 5});
  for (int trial = 0; trial < 10; ++trial) {
    Tensor params = Tensor::from({2, 4}, {rng.uniform(0.3, 0.8), rng.uniform(0.3, 0.8), rng.uniform(-0.15, 0.15),
                                          rng.uniform(-0.15, 0.15), rng.uniform(0.3, 0.8), rng.uniform(0.3, 0.8),
                                          rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15)});
    auto r = check::grad_check([](auto& v) { return weighted(sample_region(v[0], v[1], 4, 3), 5); }, {src, params},
                               1e-6, {false, true});
    EXPECT_LT(r.rel_error, 1e-4);
  }
}

TEST(Eva, PartitionAttentionZeroWeightsGiveOneAndAHalf) {
  Rng rng(5);
  auto values = check::uniform_values(rng, 8 * 6 * 2, -1, 1);
  auto head = FeatureMap::make(8, 6, 2, values);
  auto parts = partition_attention(head, PartitionAttentionWeights::zeros(8, 4));
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(parts[static_cast<size_t>(i)].height, 2);
    for (int64_t ch = 0; ch < 8; ++ch)
      for (int64_t y = 0; y < 2; ++y)
        for (int64_t x = 0; x < 2; ++x)
          EXPECT_NEAR(parts[static_cast<size_t>(i)].at(ch, y, x), 1.5 * head.at(ch, 2 * i + y, x), 1e-12);
  }
  auto zero = partition_attention(FeatureMap::make(8, 6, 2, std::vector<double>(96, 0.0)),
                                  PartitionAttentionWeights::zeros(8, 4));
  for (const auto& p : zero)
    for (double v : p.data) EXPECT_EQ(v, 0.0);
}

TEST(Eva, PartitionAttentionBoundsSignAndPadding) {
  Rng rng(6);
  auto w = PartitionAttentionWeights::zeros(8, 4);
  for (int i = 0; i < 3; ++i) {
    w.reduce[i] = rand_tensor(rng, {8, 2}, -2, 2);
    w.expand[i] = rand_tensor(rng, {2, 8}, -2, 2);
  }
  auto values = check::uniform_values(rng, 8 * 7 * 3, -1, 1);
  auto head = FeatureMap::make(8, 7, 3, values);  // 7 rows pad to 9
  auto parts = partition_attention(head, w);
  for (int i = 0; i < 3; ++i)
    for (int64_t ch = 0; ch < 8; ++ch)
      for (int64_t y = 0; y < 3; ++y)
        for (int64_t x = 0; x < 3; ++x) {
          const double xi = head.at(ch, std::min<int64_t>(3 * i + y, 6), x);
          const double a = parts[static_cast<size_t>(i)].at(ch, y, x);
          EXPECT_GE(std::abs(a), std::abs(xi) - 1e-15);
          EXPECT_LE(std::abs(a), 2 * std::abs(xi) + 1e-15);
          EXPECT_EQ(std::signbit(a), std::signbit(xi));
        }
}

TEST(Eva, PartitionAttentionGradient) {
  Rng rng(7);
  for (int seed = 0; seed < 10; ++seed) {
    Tensor region = rand_tensor(rng, {2, 8, 6, 2});
    Tensor w0 = rand_tensor(rng, {8, 2}), u0 = rand_tensor(rng, {2, 8});
    auto f = [](auto& v) {
      PartitionAttentionWeights w;
      for (int i = 0; i < 3; ++i) {
        w.reduce[i] = v[1];
        w.expand[i] = v[2];
      }
      auto parts = partition_attention(v[0], w);
      return weighted(parts[0], 1) + weighted(parts[1], 2) + weighted(parts[2], 3);
    };
    EXPECT_LT(check::grad_check(f, {region, w0, u0}).rel_error, 1e-5);
  }
}

TEST(Eva, HeadFeatureAggregation) {
  // Spatially constant strips pool to the channel values themselves.
  std::array<FeatureMap, 3> parts;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> v;
    for (int ch = 0; ch < 4; ++ch)
      for (int s = 0; s < 6; ++s) v.push_back(ch + 10.0 * i);
    parts[static_cast<size_t>(i)] = FeatureMap::make(4, 2, 3, v);
  }
  auto f = aggregate_head_feature(parts);
  ASSERT_EQ(f.size(), 12u);
  for (int i = 0; i < 3; ++i)
    for (int ch = 0; ch < 4; ++ch) EXPECT_NEAR(f.data[static_cast<size_t>(4 * i + ch)], ch + 10.0 * i, 1e-12);

  // A single strongly active location dominates the spatial softmax.
  for (auto& p : parts) {
    std::fill(p.data.begin(), p.data.end(), 0.0);
    for (int ch = 0; ch < 4; ++ch) p.data[static_cast<size_t>(ch * 6 + 4)] = 1e3 * (ch + 1);
  }
  f = aggregate_head_feature(parts);
  for (int ch = 0; ch < 4; ++ch) EXPECT_NEAR(f.data[static_cast<size_t>(ch)], 1e3 * (ch + 1), 1e-9);
}

TEST(Eva, FusionWeights) {
  auto w = fusion_weights({0, 0});
  EXPECT_DOUBLE_EQ(w[0], 0.5);
  EXPECT_DOUBLE_EQ(w[1], 0.5);
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    auto r = fusion_weights({rng.uniform(-50, 50), rng.uniform(-50, 50)});
    EXPECT_NEAR(r[0] + r[1], 1.0, 1e-12);
    EXPECT_GE(r[0], 0);
    EXPECT_LE(r[0], 1);
  }
  auto f_t = FeatureVector::make({1, 2, 3}, false), f_h = FeatureVector::make({4, 5, 6, 7, 8, 9}, false);
  auto f = fuse(f_t, f_h, {20, -20});
  ASSERT_EQ(f.size(), 9u);
  EXPECT_TRUE(f.normalized);
  for (size_t i = 3; i < 9; ++i) EXPECT_LT(std::abs(f.data[i]), 1e-8);
  EXPECT_THROW(fuse(f_t, f_h, {1, 2, 3}), ConfigError);
}

TEST(Eva, FuseGradient) {
  Rng rng(9);
  Tensor ft = rand_tensor(rng, {3, 4}), fh = rand_tensor(rng, {3, 6}), fe = rand_tensor(rng, {3, 2}, -2, 2);
  EXPECT_LT(check::grad_check([](auto& v) { return weighted(fuse(v[0], v[1], v[2]), 4); }, {ft, fh, fe}).rel_error,
            1e-6);
}

TEST(Eva, LocalizationStartsAtHeadPrior) {
  ParameterStore store;
  Rng rng(10);
  EvaConfig cfg;
  cfg.reduction = 4;
  EvaStream eva(cfg, 8, 8, 4, store, rng);
  for (int t = 0; t < 3; ++t) {
    auto map = FeatureMap::make(8, 8, 4, check::uniform_values(rng, 8 * 8 * 4, -1, 1));
    const auto a = predict_localization(eva, map);
    EXPECT_NEAR(a.scale_x, kHeadPrior.scale_x, 1e-12);
    EXPECT_NEAR(a.scale_y, kHeadPrior.scale_y, 1e-12);
    EXPECT_NEAR(a.shift_x, kHeadPrior.shift_x, 1e-12);
    EXPECT_NEAR(a.shift_y, kHeadPrior.shift_y, 1e-12);
  }
  EXPECT_EQ(eva.region_height(), 8);
  cfg.reduction = 3;
  EXPECT_THROW(EvaStream(cfg, 8, 8, 4, store, rng), ConfigError);
}

TEST(Eva, StreamForwardShapesAndInitialFusion) {
  ParameterStore store;
  Rng rng(11);
  EvaConfig cfg;
  cfg.reduction = 4;
  cfg.region_height = 6;
  cfg.region_width = 3;
  EvaStream eva(cfg, 8, 8, 4, store, rng);
  Tensor map = rand_tensor(rng, {2, 8, 8, 4});
  auto o = eva.forward(map);
  EXPECT_EQ(o.region.shape(), (ag::Shape{2, 8, 6, 3}));
  EXPECT_EQ(o.f_h.shape(), (ag::Shape{2, 24}));
  EXPECT_EQ(o.f_e.shape(), (ag::Shape{2, 2}));
  auto w = fusion_weights({o.f_e.at({0, 0}), o.f_e.at({0, 1})});
  EXPECT_NEAR(w[0], cfg.initial_stream1_weight, 1e-12);
}
