#pragma once

// Composite training objective: metric distillation, the two attribute
// prior terms, batch-hard triplet and label-smoothed cross-entropy.
//
// Each term has a plain scalar form for a single pair or sample and a
// differentiable batched form; the batched forms reduce to the scalar
// ones when given one row.

#include <string>
#include <utility>
#include <vector>

#include "v2e/attributes.hpp"
#include "v2e/tensor.hpp"
#include "v2e/types.hpp"

namespace v2e {

struct LossWeights {
  double alpha = 10.0;
  double beta = 50.0;
  double margin = 0.3;
  double v = 0.5;
  double label_smoothing = 0.1;
  // Per-term overrides; negative values keep the tying
  // p1 = triplet = alpha and p2 = ce = beta.
  double p1 = -1, p2 = -1, triplet = -1, ce = -1;

  double weight_p1() const { return p1 >= 0 ? p1 : alpha; }
  double weight_p2() const { return p2 >= 0 ? p2 : beta; }
  double weight_triplet() const { return triplet >= 0 ? triplet : alpha; }
  double weight_ce() const { return ce >= 0 ? ce : beta; }
  void validate() const;  // throws ConfigError
};

struct PairAttributeContext {
  std::vector<uint8_t> xor_bits;
  int exclusive = 0;  // M_E
  int total = 0;      // M

  // Prior losses are undefined when no or every attribute differs.
  bool degenerate() const { return exclusive == 0 || exclusive == total; }
};

PairAttributeContext attribute_xor(const AttributeVector& a, const AttributeVector& b);

// Scalar forms.
double triplet_loss(double d_ap, double d_an, double margin);
// q: per-sample class probabilities. Probabilities are floored at 1e-12.
double cross_entropy_loss(const std::vector<std::vector<double>>& q, const std::vector<int>& labels,
                          double smoothing = 0.0);
double metric_distillation_loss(const DistanceDecomposition& dec);
double prior_lambda(int m, int m_e, double v);
double prior_loss_p1(const DistanceDecomposition& dec, const PairAttributeContext& ctx, double v);
double prior_loss_p2(const DistanceDecomposition& dec, const PairAttributeContext& ctx, double v);

struct LossComponents {
  double distill = 0, p1 = 0, p2 = 0, triplet = 0, ce = 0;
};
// Throws RuntimeFault naming the first non-finite component.
double total_loss(const LossComponents& c, const LossWeights& w);
void check_finite(const LossComponents& c);

// Batched, differentiable forms.

// d: [N,N] embedding distances. Hardest positive and negative per anchor;
// anchors lacking either are skipped. Mean over anchors.
ag::Tensor triplet_loss(const ag::Tensor& d, const std::vector<int>& labels, double margin);
// logits: [N,K]. Mean over samples.
ag::Tensor cross_entropy_loss(const ag::Tensor& logits, const std::vector<int>& labels, double smoothing);
// q: [N,K] probabilities. Mean over samples.
ag::Tensor cross_entropy_from_probs(const ag::Tensor& q, const std::vector<int>& labels, double smoothing);

// Pair tensors: d [P], dk [P,M], xor [P,M] as 0/1 constants.
ag::Tensor metric_distillation_loss(const ag::Tensor& d, const ag::Tensor& dk);
ag::Tensor prior_loss_p1(const ag::Tensor& dk, const std::vector<PairAttributeContext>& ctx, double v);
ag::Tensor prior_loss_p2(const ag::Tensor& dk, const std::vector<PairAttributeContext>& ctx, double v);

// All unordered pairs i < j of an n-sample batch, row-major.
std::vector<std::pair<int, int>> all_pairs(int n);
// [N,N] -> [P]
ag::Tensor gather_pairs(const ag::Tensor& matrix, const std::vector<std::pair<int, int>>& pairs);
// [M,N,N] -> [P,M]
ag::Tensor gather_pair_rows(const ag::Tensor& stack, const std::vector<std::pair<int, int>>& pairs);

}  // namespace v2e
