#pragma once

// The three-stream model: backbone + GeM (Stream 1), elevated-view
// attention with adaptive fusion (Stream 2) and the attribute decomposition
// head (Stream 3), plus a linear identity classifier on the fused embedding.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "v2e/adh.hpp"
#include "v2e/attributes.hpp"
#include "v2e/backbone.hpp"
#include "v2e/eva.hpp"
#include "v2e/nn.hpp"

namespace v2e {

struct ModelConfig {
  BackboneConfig backbone;
  EvaConfig eva;
  AdhConfig adh;
  int num_classes = 1;
  double gem_p = 3.0;
  // Identity logits are logit_scale * cos(f, w_class).
  double logit_scale = 16.0;
};

class V2EModel {
 public:
  V2EModel(const ModelConfig& config, uint64_t seed);

  struct Output {
    ag::Tensor map;     // [N,C,h,w]
    ag::Tensor f_t;     // [N,C] pooled Stream 1
    ag::Tensor f;       // [N,D] fused, L2-normalized
    ag::Tensor logits;  // [N,num_classes]
    std::optional<EvaStream::Output> eva;
    std::optional<AdhStream::Output> adh;
  };

  // images: [N,3,H,W]. Stream 3 runs only when enabled and requested.
  Output forward(const ag::Tensor& images, bool with_adh = true) const;

  // Fused embeddings without gradient recording, in chunks.
  std::vector<FeatureVector> embed(const std::vector<const Image*>& images, int chunk = 64) const;

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  int embedding_dim() const;
  const Backbone& backbone() const { return *backbone_; }
  const EvaStream& eva() const { return *eva_; }
  const AdhStream& adh() const { return *adh_; }
  const ag::Tensor& gem_p() const { return gem_p_; }

  // Parameter groups that receive updates under the current stream toggles.
  std::vector<std::string> active_groups() const;
  std::vector<std::string> target_groups() const;  // everything except Stream 3

  bool trained() const { return trained_; }
  void mark_trained(bool on = true) { trained_ = on; }

 private:
  ModelConfig config_;
  ParameterStore params_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<Backbone> adh_backbone_;  // only when Stream 3 does not share
  std::unique_ptr<EvaStream> eva_;
  std::unique_ptr<AdhStream> adh_;
  ag::Tensor gem_p_;
  ag::Tensor classifier_;
  bool trained_ = false;
};

struct AttributeContribution {
  int bit = 0;
  std::string name;   // "label=category"
  double distance = 0;  // d^k
  double share = 0;     // d^k / reconstructed
};

struct Explanation {
  DistanceDecomposition decomposition;
  std::vector<AttributeContribution> ranked;  // descending by d^k, all M entries
  // Attention maps upsampled to image resolution: [M][H*W] per image.
  std::vector<std::vector<double>> saliency_i, saliency_j;
  int height = 0, width = 0;
  std::vector<std::string> warnings;
};

// Requires Stream 3. Images must match the model input resolution.
Explanation explain_pair(const V2EModel& model, const AttributeSchema& schema, const Image& x_i, const Image& x_j);

// Per-pair decomposition for a batch of images: entry [i][j] for i < j.
std::vector<DistanceDecomposition> decompose_batch(const V2EModel& model, const std::vector<const Image*>& images,
                                                   std::vector<std::pair<int, int>>* pairs_out = nullptr);

// Writes explanation.json, explanation.txt and a saliency grid PNG for
// the `top` highest-ranked attributes.
void write_explanation(const Explanation& e, const Image& x_i, const Image& x_j, const std::string& out_dir,
                       int top = 8);

}  // namespace v2e
