#include "v2e/eva.hpp"

#include <cmath>

#include <fmt/format.h>

#include "v2e/errors.hpp"
#include "v2e/ops.hpp"

namespace v2e {

using ag::Tensor;

PartitionAttentionWeights PartitionAttentionWeights::zeros(int64_t channels, int reduction) {
  const int64_t r = std::max<int64_t>(1, channels / reduction);
  PartitionAttentionWeights w;
  for (int i = 0; i < 3; ++i) {
    w.reduce[i] = Tensor::zeros({channels, r}, true);
    w.expand[i] = Tensor::zeros({r, channels}, true);
  }
  return w;
}

Tensor clamp_affine(const Tensor& raw) {
  Tensor s = ag::clamp(ag::slice(raw, 1, 0, 2), AffineParams::kMinScale, 1.0);
  Tensor room = 1.0 - s;
  Tensor t = ag::minimum(ag::maximum(ag::slice(raw, 1, 2, 2), -room), room);
  return ag::concat({s, t}, 1);
}

Tensor sample_region(const Tensor& src, const Tensor& params, int64_t out_h, int64_t out_w) {
  return ag::affine_grid_sample(src, params, out_h, out_w);
}

std::array<Tensor, 3> partition_attention(const Tensor& region, const PartitionAttentionWeights& w) {
  const int64_t h = region.dim(2);
  const int64_t strip = (h + 2) / 3;
  Tensor x = region;
  if (strip * 3 != h) {
    std::vector<Tensor> rows{region};
    Tensor last = ag::slice(region, 2, h - 1, 1);
    for (int64_t i = h; i < strip * 3; ++i) rows.push_back(last);
    x = ag::concat(rows, 2);
  }
  const int64_t n = x.dim(0), c = x.dim(1);
  std::array<Tensor, 3> out;
  for (int i = 0; i < 3; ++i) {
    Tensor xi = ag::slice(x, 2, i * strip, strip);
    Tensor gap = ag::mean(ag::reshape(xi, {n, c, -1}), 2);
    Tensor d = ag::sigmoid(ag::matmul(ag::relu(ag::matmul(gap, w.reduce[i])), w.expand[i]));
    out[i] = xi * (1.0 + ag::reshape(d, {n, c, 1, 1}));
  }
  return out;
}

Tensor aggregate_head_feature(const std::array<Tensor, 3>& parts) {
  std::vector<Tensor> pooled;
  for (const auto& a : parts) {
    const int64_t n = a.dim(0), c = a.dim(1);
    Tensor flat = ag::reshape(a, {n, c, -1});
    Tensor xi = ag::softmax(ag::sum(flat, 1), 1);  // [N,P]
    pooled.push_back(ag::sum(flat * ag::reshape(xi, {n, 1, -1}), 2));
  }
  return ag::concat(pooled, 1);
}

Tensor fuse(const Tensor& f_t, const Tensor& f_h, const Tensor& f_e) {
  if (f_e.rank() != 2 || f_e.dim(1) != 2 || f_t.rank() != 2 || f_h.rank() != 2 || f_t.dim(0) != f_h.dim(0) ||
      f_e.dim(0) != f_t.dim(0))
    throw ConfigError(fmt::format("fusion inputs disagree: f_t {}, f_h {}, f_e {}", ag::shape_str(f_t.shape()),
                                  ag::shape_str(f_h.shape()), ag::shape_str(f_e.shape())));
  Tensor w = ag::softmax(f_e, 1);
  Tensor f = ag::concat({f_t * ag::slice(w, 1, 0, 1), f_h * ag::slice(w, 1, 1, 1)}, 1);
  return ag::l2_normalize(f, 1);
}

EvaStream::EvaStream(const EvaConfig& config, int64_t channels, int grid_h, int grid_w, ParameterStore& store,
                     Rng& rng)
    : config_(config), channels_(channels) {
  if (config_.reduction <= 0 || channels % config_.reduction != 0)
    throw ConfigError(fmt::format("reduction ratio {} does not divide {} channels", config_.reduction, channels));
  if (config_.localization_hidden <= 0) throw ConfigError("localization_hidden must be positive");
  if (!(config_.initial_stream1_weight > 0 && config_.initial_stream1_weight < 1))
    throw ConfigError("initial_stream1_weight must lie in (0,1)");
  region_h_ = config_.region_height > 0 ? config_.region_height : grid_h;
  region_w_ = config_.region_width > 0 ? config_.region_width : grid_w;
  if (region_h_ < 1 || region_w_ < 1) throw ConfigError("head region grid must be positive");

  const std::string g = group::kEva;
  const int64_t hid = config_.localization_hidden;
  const int64_t r = channels / config_.reduction;
  loc1_w_ = store.add("eva.loc1.w", g, {channels, hid}, he_normal(rng, channels * hid, channels));
  loc1_b_ = store.add("eva.loc1.b", g, {hid}, std::vector<double>(static_cast<size_t>(hid), 0.0));
  // Zero final layer: the regressor starts exactly at the head prior.
  loc2_w_ = store.add("eva.loc2.w", g, {hid, 4}, std::vector<double>(static_cast<size_t>(hid * 4), 0.0));
  loc2_b_ = store.add("eva.loc2.b", g, {4},
                      {kHeadPrior.scale_x, kHeadPrior.scale_y, kHeadPrior.shift_x, kHeadPrior.shift_y});
  for (int i = 0; i < 3; ++i) {
    attention_.reduce[i] = store.add(fmt::format("eva.part{}.w", i), g, {channels, r}, he_normal(rng, channels * r, channels));
    attention_.expand[i] = store.add(fmt::format("eva.part{}.u", i), g, {r, channels}, he_normal(rng, r * channels, r));
  }
  // The head half has three times the dimensions of the pooled half, so the
  // fusion starts tilted toward Stream 1.
  const double w1 = config_.initial_stream1_weight;
  const double bias = std::log(w1 / (1.0 - w1));
  if (config_.per_sample_fusion) {
    fusion_w_ = store.add("eva.fuse.w", g, {3 * channels, 2}, std::vector<double>(static_cast<size_t>(6 * channels), 0.0));
    fusion_b_ = store.add("eva.fuse.b", g, {2}, {bias, 0.0});
  } else {
    fusion_logits_ = store.add("eva.fuse.logits", g, {1, 2}, {bias, 0.0});
  }
}

Tensor EvaStream::localize(const Tensor& map) const {
  const int64_t n = map.dim(0), c = map.dim(1);
  if (c != channels_) throw ConfigError(fmt::format("EVA expects {} channels, got {}", channels_, c));
  Tensor gap = ag::mean(ag::reshape(map, {n, c, -1}), 2);
  Tensor raw = linear(ag::relu(linear(gap, loc1_w_, loc1_b_)), loc2_w_, loc2_b_);
  return clamp_affine(raw);
}

EvaStream::Output EvaStream::forward(const Tensor& map) const {
  Output o;
  o.params = localize(map);
  o.region = sample_region(map, o.params, region_h_, region_w_);
  o.parts = partition_attention(o.region, attention_);
  o.f_h = aggregate_head_feature(o.parts);
  if (config_.per_sample_fusion) {
    o.f_e = linear(o.f_h, fusion_w_, fusion_b_);
  } else {
    o.f_e = Tensor::zeros({map.dim(0), 2}) + fusion_logits_;
  }
  return o;
}

Tensor to_tensor(const FeatureMap& map) {
  return Tensor::from({1, map.channels, map.height, map.width}, map.data);
}

FeatureMap to_feature_map(const Tensor& t, int64_t index) {
  if (t.rank() != 4) throw ConfigError("expected a [N,C,H,W] tensor, got " + ag::shape_str(t.shape()));
  const int64_t c = t.dim(1), h = t.dim(2), w = t.dim(3), per = c * h * w;
  auto d = t.data();
  auto begin = d.begin() + static_cast<std::ptrdiff_t>(index * per);
  return FeatureMap::make(c, h, w, std::vector<double>(begin, begin + per));
}

AffineParams predict_localization(const EvaStream& eva, const FeatureMap& map) {
  ag::NoGradGuard guard;
  const Tensor t = eva.localize(to_tensor(map));
  auto p = t.data();
  return AffineParams{p[0], p[1], p[2], p[3]}.clamped();
}

FeatureMap sample_region(const FeatureMap& src, const AffineParams& params, int64_t out_h, int64_t out_w) {
  ag::NoGradGuard guard;
  Tensor p = Tensor::from({1, 4}, {params.scale_x, params.scale_y, params.shift_x, params.shift_y});
  return to_feature_map(sample_region(to_tensor(src), p, out_h, out_w));
}

std::array<FeatureMap, 3> partition_attention(const FeatureMap& head, const PartitionAttentionWeights& w) {
  ag::NoGradGuard guard;
  auto parts = partition_attention(to_tensor(head), w);
  return {to_feature_map(parts[0]), to_feature_map(parts[1]), to_feature_map(parts[2])};
}

FeatureVector aggregate_head_feature(const std::array<FeatureMap, 3>& parts) {
  ag::NoGradGuard guard;
  auto f = aggregate_head_feature({to_tensor(parts[0]), to_tensor(parts[1]), to_tensor(parts[2])});
  return FeatureVector::make(std::vector<double>(f.data().begin(), f.data().end()), false);
}

std::array<double, 2> fusion_weights(const std::vector<double>& f_e) {
  if (f_e.size() != 2) throw ConfigError(fmt::format("fusion logits must have 2 entries, got {}", f_e.size()));
  const double m = std::max(f_e[0], f_e[1]);
  const double a = std::exp(f_e[0] - m), b = std::exp(f_e[1] - m);
  return {a / (a + b), b / (a + b)};
}

FeatureVector fuse(const FeatureVector& f_t, const FeatureVector& f_h, const std::vector<double>& f_e) {
  ag::NoGradGuard guard;
  if (f_e.size() != 2) throw ConfigError(fmt::format("fusion logits must have 2 entries, got {}", f_e.size()));
  auto row = [](const std::vector<double>& v) {
    return Tensor::from({1, static_cast<int64_t>(v.size())}, v);
  };
  auto f = fuse(row(f_t.data), row(f_h.data), row(f_e));
  return FeatureVector::make(std::vector<double>(f.data().begin(), f.data().end()), true);
}

}  // namespace v2e
