#include "v2e/adh.hpp"

#include <cmath>

#include <fmt/format.h>

#include "v2e/backbone.hpp"
#include "v2e/errors.hpp"
#include "v2e/ops.hpp"

namespace v2e {

using ag::Tensor;

double delta_activation(double x, double k, double t) {
  return x > 0 ? k * std::pow(x + 1.0, t) : k * std::exp(x);
}

std::vector<double> delta_activation(const std::vector<double>& x, double k, double t) {
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = delta_activation(x[i], k, t);
  return out;
}

AdhWeights AdhWeights::zeros(int64_t channels, int64_t attributes) {
  const int64_t r = channels / 8;
  return {Tensor::zeros({r, channels, 3, 3}, true), Tensor::zeros({r}, true),
          Tensor::zeros({attributes, r, 1, 1}, true), Tensor::zeros({attributes}, true)};
}

Tensor adh_forward(const Tensor& map, const AdhWeights& w, double k, double t) {
  if (map.rank() != 4 || map.dim(1) != w.conv1_w.dim(1))
    throw ConfigError(fmt::format("attribute head expects {} channels, got map {}", w.conv1_w.dim(1),
                                  ag::shape_str(map.shape())));
  Tensor h = ag::relu(ag::conv2d(map, w.conv1_w, w.conv1_b, 1, 1));
  return ag::delta_activation(ag::conv2d(h, w.conv2_w, w.conv2_b, 1, 0), k, t);
}

Tensor attribute_features(const Tensor& map, const Tensor& attention, const Tensor& p, double eps) {
  if (map.rank() != 4 || attention.rank() != 4 || map.dim(0) != attention.dim(0) || map.dim(2) != attention.dim(2) ||
      map.dim(3) != attention.dim(3))
    throw ConfigError(fmt::format("feature map {} and attention maps {} do not share a grid",
                                  ag::shape_str(map.shape()), ag::shape_str(attention.shape())));
  const int64_t n = map.dim(0), c = map.dim(1), m = attention.dim(1);
  return ag::attention_gem(ag::reshape(map, {n, c, -1}), ag::reshape(attention, {n, m, -1}), p, eps);
}

Tensor attribute_distance_matrix(const Tensor& feats) {
  const int64_t m = feats.dim(1);
  Tensor u = ag::permute(ag::l2_normalize(feats, 2), {1, 0, 2});  // [M,N,C]
  Tensor cos = ag::matmul(u, ag::transpose(u, 1, 2));             // [M,N,N]
  return ag::relu(2.0 - 2.0 * cos) * (1.0 / static_cast<double>(m));
}

Tensor embedding_distance_matrix(const Tensor& f) {
  Tensor sq = ag::sum(f * f, 1, true);  // [N,1]
  Tensor g = ag::matmul(f, ag::transpose(f, 0, 1));
  Tensor d2 = ag::relu(sq + ag::transpose(sq, 0, 1) - 2.0 * g);
  return ag::safe_sqrt(d2);
}

DistanceDecomposition decompose_distance(const std::vector<FeatureVector>& f_i, const std::vector<FeatureVector>& f_j,
                                         double total) {
  if (f_i.size() != f_j.size())
    throw ConfigError(fmt::format("attribute counts differ: {} vs {}", f_i.size(), f_j.size()));
  const double m = static_cast<double>(f_i.size());
  std::vector<double> per(f_i.size());
  for (size_t k = 0; k < f_i.size(); ++k) {
    const double d = pairwise_distance(f_i[k], f_j[k]);
    per[k] = d * d / m;
  }
  return DistanceDecomposition::make(total, std::move(per));
}

AdhStream::AdhStream(const AdhConfig& config, int64_t channels, ParameterStore& store, Rng& rng)
    : config_(config), channels_(channels) {
  if (config_.attributes <= 0) throw ConfigError("attribute count must be positive");
  if (channels % 8 != 0) throw ConfigError(fmt::format("attribute head needs channels divisible by 8, got {}", channels));
  if (!(config_.t > 0 && config_.t <= 1)) throw ConfigError(fmt::format("delta T must lie in (0,1], got {}", config_.t));
  if (!(config_.resolved_k() > 0 && config_.resolved_k() <= 1))
    throw ConfigError(fmt::format("delta K must lie in (0,1], got {}", config_.resolved_k()));
  const std::string g = group::kEp;
  const int64_t r = channels / 8, m = config_.attributes;
  weights_.conv1_w = store.add("ep.conv1.w", g, {r, channels, 3, 3}, he_normal(rng, r * channels * 9, channels * 9));
  weights_.conv1_b = store.add("ep.conv1.b", g, {r}, std::vector<double>(static_cast<size_t>(r), 0.0));
  weights_.conv2_w = store.add("ep.conv2.w", g, {m, r, 1, 1}, he_normal(rng, m * r, r));
  weights_.conv2_b = store.add("ep.conv2.b", g, {m}, std::vector<double>(static_cast<size_t>(m), 0.0));
  p_ = store.add("ep.gem_p", g, {1}, {3.0});
}

AdhStream::Output AdhStream::forward(const Tensor& map) const {
  Output o;
  o.attention = adh_forward(map, weights_, config_.resolved_k(), config_.t);
  o.features = attribute_features(map, o.attention, p_);
  return o;
}

}  // namespace v2e
