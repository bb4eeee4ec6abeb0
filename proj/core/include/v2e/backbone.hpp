#pragma once

// Stream 1: backbone feature maps, GeM pooling, and the pairwise metric.

#include <string>
#include <vector>

#include "v2e/nn.hpp"
#include "v2e/types.hpp"

namespace v2e {

enum class BackboneKind { TransformerPatch, ToyConv };
std::string_view backbone_kind_name(BackboneKind k);
BackboneKind parse_backbone_kind(std::string_view s);

struct BackboneConfig {
  BackboneKind kind = BackboneKind::TransformerPatch;
  int input_height = 256;
  int input_width = 128;
  // Patch edge for the transformer; total stride for ToyConv (a power of two,
  // one stride-2 block per factor of two).
  int patch_size = 16;
  int embed_channels = 768;
  // Expected feature grid; 0 means "derive from input and patch size".
  int grid_height = 0;
  int grid_width = 0;

  int depth = 12;  // transformer blocks
  int heads = 12;
  int mlp_ratio = 4;
  int toy_extra_convs = 0;  // stride-1 convs appended to every ToyConv block

  int out_height() const { return input_height / patch_size; }
  int out_width() const { return input_width / patch_size; }
  // Throws ConfigError when the grid, resolution, patch size or channel count disagree.
  void validate() const;
};

class Backbone {
 public:
  Backbone(const BackboneConfig& config, ParameterStore& store, Rng& rng, const std::string& prefix,
           const std::string& group);

  // images: [N,3,H,W] normalized pixels -> [N,C,h,w].
  ag::Tensor forward(const ag::Tensor& images) const;
  const BackboneConfig& config() const { return config_; }

 private:
  ag::Tensor forward_toy(const ag::Tensor& x) const;
  ag::Tensor forward_vit(const ag::Tensor& x) const;

  BackboneConfig config_;
  struct Conv {
    ag::Tensor w, b;
    int stride;
  };
  std::vector<Conv> convs_;
  struct Block {
    ag::Tensor ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
    ag::Tensor ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };
  ag::Tensor patch_w_, patch_b_, pos_, final_g_, final_b_;
  std::vector<Block> blocks_;
};

// Stacks HWC images into a normalized [N,3,H,W] tensor. Every image must
// already have the given resolution.
ag::Tensor image_batch(const std::vector<const Image*>& images, int height, int width);

// Runs the backbone without recording gradients.
std::vector<FeatureMap> extract_feature_map(const Backbone& backbone, const std::vector<const Image*>& images);

inline constexpr double kGemFloor = 1e-6;

// Per-channel (mean over space of max(x, eps)^p)^(1/p).
FeatureVector gem_pool(const FeatureMap& map, double p, double eps = kGemFloor);

// Euclidean distance between the L2-normalized inputs.
double pairwise_distance(const FeatureVector& a, const FeatureVector& b);

}  // namespace v2e
