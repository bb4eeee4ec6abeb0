#pragma once

// Stream 2: elevated-view attention. An affine window is regressed onto the
// head region of the backbone map, resampled, split into three horizontal
// strips with channel gating, aggregated into a head feature and fused with
// the Stream 1 embedding.

#include <array>
#include <vector>

#include "v2e/nn.hpp"
#include "v2e/types.hpp"

namespace v2e {

// Upper-region window the localization head starts from.
inline constexpr AffineParams kHeadPrior{1.0, 0.33, 0.0, -0.67};

struct EvaConfig {
  bool enabled = true;
  int reduction = 16;
  // Resampled head-region grid; 0 means "same as the backbone grid".
  int region_height = 0;
  int region_width = 0;
  int localization_hidden = 32;
  // Per-sample fusion weights from the head feature, or one learned pair.
  bool per_sample_fusion = true;
  // Fusion weight on the pooled embedding before any training.
  double initial_stream1_weight = 0.8;
};

struct PartitionAttentionWeights {
  std::array<ag::Tensor, 3> reduce;  // W_i: [C, C/r]
  std::array<ag::Tensor, 3> expand;  // U_i: [C/r, C]

  static PartitionAttentionWeights zeros(int64_t channels, int reduction);
};

// [N,4] raw regressor output -> window with scales in [kMinScale,1] and
// shifts kept inside the source. Differentiable where no clamp is active.
ag::Tensor clamp_affine(const ag::Tensor& raw);

// src: [N,C,H,W], params: [N,4] -> [N,C,out_h,out_w].
ag::Tensor sample_region(const ag::Tensor& src, const ag::Tensor& params, int64_t out_h, int64_t out_w);

// region: [N,C,H,W] -> three strips A_i = X_i * (1 + d_i). Heights that do
// not split evenly are padded by repeating the last row.
std::array<ag::Tensor, 3> partition_attention(const ag::Tensor& region, const PartitionAttentionWeights& w);

// Spatial softmax over each strip's channel sum, used as pooling weights.
// Returns f_h: [N,3C].
ag::Tensor aggregate_head_feature(const std::array<ag::Tensor, 3>& parts);

// f = normalize((f_t * w1) ++ (f_h * w2)) with [w1,w2] = softmax(f_e).
ag::Tensor fuse(const ag::Tensor& f_t, const ag::Tensor& f_h, const ag::Tensor& f_e);

class EvaStream {
 public:
  EvaStream(const EvaConfig& config, int64_t channels, int grid_h, int grid_w, ParameterStore& store, Rng& rng);

  struct Output {
    ag::Tensor params;  // [N,4]
    ag::Tensor region;  // [N,C,rh,rw]
    std::array<ag::Tensor, 3> parts;
    ag::Tensor f_h;     // [N,3C]
    ag::Tensor f_e;     // [N,2]
  };

  ag::Tensor localize(const ag::Tensor& map) const;
  Output forward(const ag::Tensor& map) const;

  const EvaConfig& config() const { return config_; }
  const PartitionAttentionWeights& attention_weights() const { return attention_; }
  int region_height() const { return region_h_; }
  int region_width() const { return region_w_; }

 private:
  EvaConfig config_;
  int64_t channels_;
  int region_h_, region_w_;
  ag::Tensor loc1_w_, loc1_b_, loc2_w_, loc2_b_;
  PartitionAttentionWeights attention_;
  ag::Tensor fusion_w_, fusion_b_;
  ag::Tensor fusion_logits_;
};

// Single-map conveniences over the batched functions above.
AffineParams predict_localization(const EvaStream& eva, const FeatureMap& map);
FeatureMap sample_region(const FeatureMap& src, const AffineParams& params, int64_t out_h, int64_t out_w);
std::array<FeatureMap, 3> partition_attention(const FeatureMap& head, const PartitionAttentionWeights& w);
FeatureVector aggregate_head_feature(const std::array<FeatureMap, 3>& parts);
// Fusion weights are softmax(f_e); throws ConfigError when f_e is not a 2-vector.
FeatureVector fuse(const FeatureVector& f_t, const FeatureVector& f_h, const std::vector<double>& f_e);
std::array<double, 2> fusion_weights(const std::vector<double>& f_e);

// Tensor <-> domain type helpers.
ag::Tensor to_tensor(const FeatureMap& map);
FeatureMap to_feature_map(const ag::Tensor& t, int64_t index = 0);

}  // namespace v2e
