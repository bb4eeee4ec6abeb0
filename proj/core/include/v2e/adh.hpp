#pragma once

// Stream 3: the attribute decomposition head. One positive attention map
// per attribute bit reweights the backbone map; the pooled per-attribute
// features decompose the pairwise distance into M additive contributions.

#include <vector>

#include "v2e/nn.hpp"
#include "v2e/types.hpp"

namespace v2e {

struct AdhConfig {
  bool enabled = true;
  int attributes = 88;  // M
  double k = 0.0;       // 0 selects 1/M
  double t = 0.5;
  // When false, Stream 3 runs its own copy of the backbone.
  bool share_backbone = true;

  double resolved_k() const { return k > 0 ? k : 1.0 / attributes; }
};

double delta_activation(double x, double k, double t);
std::vector<double> delta_activation(const std::vector<double>& x, double k, double t);

struct AdhWeights {
  ag::Tensor conv1_w;  // [C/8, C, 3, 3]
  ag::Tensor conv1_b;  // [C/8]
  ag::Tensor conv2_w;  // [M, C/8, 1, 1]
  ag::Tensor conv2_b;  // [M]

  static AdhWeights zeros(int64_t channels, int64_t attributes);
};

// map: [N,C,h,w] -> attention maps [N,M,h,w], all entries > 0.
ag::Tensor adh_forward(const ag::Tensor& map, const AdhWeights& w, double k, double t);

// F: [N,C,h,w], A: [N,M,h,w] -> f^k = GeM(F * A^k): [N,M,C].
ag::Tensor attribute_features(const ag::Tensor& map, const ag::Tensor& attention, const ag::Tensor& p,
                              double eps = 1e-6);

// Per-attribute distances for every pair in the batch:
// d^k[i,j] = ||norm(f_i^k) - norm(f_j^k)||^2 / M.  feats: [N,M,C] -> [M,N,N].
ag::Tensor attribute_distance_matrix(const ag::Tensor& feats);

// Euclidean distances between rows of an [N,D] embedding -> [N,N].
ag::Tensor embedding_distance_matrix(const ag::Tensor& f);

// Single pair from per-attribute feature lists (each of length M).
DistanceDecomposition decompose_distance(const std::vector<FeatureVector>& f_i, const std::vector<FeatureVector>& f_j,
                                         double total);

class AdhStream {
 public:
  AdhStream(const AdhConfig& config, int64_t channels, ParameterStore& store, Rng& rng);

  struct Output {
    ag::Tensor attention;  // [N,M,h,w]
    ag::Tensor features;   // [N,M,C]
  };
  Output forward(const ag::Tensor& map) const;

  const AdhConfig& config() const { return config_; }
  const AdhWeights& weights() const { return weights_; }
  const ag::Tensor& gem_p() const { return p_; }

 private:
  AdhConfig config_;
  int64_t channels_;
  AdhWeights weights_;
  ag::Tensor p_;
};

}  // namespace v2e
