#include "support/gradient_cases.hpp"

#include <cmath>

#include "support/check.hpp"
#include "v2e/adh.hpp"
#include "v2e/eva.hpp"
#include "v2e/losses.hpp"
#include "v2e/ops.hpp"

namespace v2e::check {

namespace {

using ag::Tensor;

constexpr double kGap = 1e-3;

Rng seeded(uint64_t seed, uint64_t salt) { return Rng(mix64(seed * 7919 + salt)); }

Tensor uniform(Rng& rng, ag::Shape shape, double lo, double hi) {
  return Tensor::from(shape, uniform_values(rng, static_cast<size_t>(ag::numel_of(shape)), lo, hi));
}

// Random fixed projection to a scalar so every output element matters.
Tensor weighted(const Tensor& y, uint64_t seed) {
  Rng rng(seed);
  return ag::sum(y * uniform(rng, y.shape(), -1, 1));
}

PairAttributeContext context(std::vector<uint8_t> bits) {
  PairAttributeContext c;
  c.xor_bits = std::move(bits);
  c.total = static_cast<int>(c.xor_bits.size());
  for (auto b : c.xor_bits) c.exclusive += b;
  return c;
}

double distillation(uint64_t seed) {
  Rng rng = seeded(seed, 1);
  const int p = 5, m = 6;
  for (;;) {
    Tensor d = uniform(rng, {p}, 0.1, 1.5);
    Tensor dk = uniform(rng, {p, m}, 0.01, 0.3);
    const Tensor r = d - ag::sum(dk, 1);
    bool ok = true;
    for (double v : r.data()) ok &= std::abs(v) > kGap;
    if (ok) return grad_check([](auto& v) { return metric_distillation_loss(v[0], v[1]); }, {d, dk}).rel_error;
  }
}

struct PriorInputs {
  Tensor dk;
  std::vector<PairAttributeContext> ctx;
};

// XOR masks with 0 < M_E < M; shares kept clear of both hinge thresholds.
PriorInputs prior_inputs(uint64_t seed) {
  Rng rng = seeded(seed, 2);
  const int p = 5, m = 6;
  const double v = 0.5;
  PriorInputs in;
  for (int i = 0; i < p; ++i) {
    std::vector<uint8_t> bits(m, 0);
    for (auto& b : bits) b = rng.uniform() < 0.3;
    bits[static_cast<size_t>((i + 1) % m)] = 0;
    bits[static_cast<size_t>((i + 2) % m)] = 1;
    in.ctx.push_back(context(bits));
  }
  auto clear_of_kinks = [&](const Tensor& t) {
    for (int i = 0; i < p; ++i) {
      const auto& c = in.ctx[static_cast<size_t>(i)];
      double total = 0, exc = 0;
      for (int k = 0; k < m; ++k) total += t.at({i, k});
      for (int k = 0; k < m; ++k) exc += c.xor_bits[static_cast<size_t>(k)] ? t.at({i, k}) / total : 0;
      const double x = std::pow(static_cast<double>(c.exclusive) / m, v);
      const double lam = prior_lambda(m, c.exclusive, v);
      if (std::abs(x - exc) < kGap) return false;
      for (int k = 0; k < m; ++k) {
        const double s = t.at({i, k}) / total;
        const double thr = c.xor_bits[static_cast<size_t>(k)] ? std::exp(-lam) * x / c.exclusive
                                                               : std::exp(lam) * (1 - x) / (m - c.exclusive);
        if (std::abs(s - thr) < kGap) return false;
      }
    }
    return true;
  };
  do {
    in.dk = uniform(rng, {p, m}, 0.01, 0.3);
  } while (!clear_of_kinks(in.dk));
  return in;
}

double prior_p1(uint64_t seed) {
  auto in = prior_inputs(seed);
  return grad_check([&](auto& v) { return prior_loss_p1(v[0], in.ctx, 0.5); }, {in.dk}).rel_error;
}

double prior_p2(uint64_t seed) {
  auto in = prior_inputs(seed);
  return grad_check([&](auto& v) { return prior_loss_p2(v[0], in.ctx, 0.5); }, {in.dk}).rel_error;
}

// Batch-hard triplet through the embedding distance matrix, with the hinge
// and the hardest-example choices kept clear of ties.
double triplet(uint64_t seed) {
  Rng rng = seeded(seed, 3);
  const std::vector<int> labels{0, 0, 1, 1, 2, 2};
  const double margin = 0.3;
  for (;;) {
    Tensor f = uniform(rng, {6, 4}, -1, 1);
    const Tensor dist = embedding_distance_matrix(f);
    bool ok = true;
    for (int i = 0; i < 6 && ok; ++i) {
      double ap = -1, an = 1e9, an2 = 1e9, ap2 = -1;
      for (int j = 0; j < 6; ++j) {
        if (j == i) continue;
        const double d = dist.at({i, j});
        if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) {
          if (d > ap) ap2 = ap, ap = d;
          else ap2 = std::max(ap2, d);
        } else if (d < an) {
          an2 = an, an = d;
        } else {
          an2 = std::min(an2, d);
        }
      }
      ok = std::abs(margin + ap - an) > kGap && an2 - an > kGap && (ap2 < 0 || ap - ap2 > kGap);
    }
    if (ok)
      return grad_check([&](auto& v) { return triplet_loss(embedding_distance_matrix(v[0]), labels, margin); }, {f})
          .rel_error;
  }
}

double cross_entropy(uint64_t seed) {
  Rng rng = seeded(seed, 4);
  Tensor logits = uniform(rng, {4, 5}, -2, 2);
  std::vector<int> labels;
  for (int i = 0; i < 4; ++i) labels.push_back(rng.below(5));
  const double smoothing = rng.uniform(0.0, 0.2);
  return grad_check([&](auto& v) { return cross_entropy_loss(v[0], labels, smoothing); }, {logits}).rel_error;
}

double delta(uint64_t seed) {
  Rng rng = seeded(seed, 5);
  auto v = uniform_values(rng, 12, -4, 4);
  for (double& x : v)
    if (std::abs(x) < kGap) x = 0.5;
  const double k = 1.0 / (1 + rng.below(88)), t = rng.uniform(0.2, 1.0);
  return grad_check([&](auto& in) { return weighted(ag::delta_activation(in[0], k, t), seed); },
                    {Tensor::from({12}, v)})
      .rel_error;
}

// Squeeze-excitation reweighting on three strips; the ReLU inputs of the
// bottleneck are kept away from zero.
double partition(uint64_t seed) {
  Rng rng = seeded(seed, 6);
  const int64_t c = 8, r = 2;
  for (;;) {
    Tensor region = uniform(rng, {2, c, 6, 2}, -1, 1);
    std::array<Tensor, 3> down, up;
    for (int i = 0; i < 3; ++i) {
      down[i] = uniform(rng, {c, r}, -1, 1);
      up[i] = uniform(rng, {r, c}, -1, 1);
    }
    bool ok = true;
    for (int i = 0; i < 3 && ok; ++i) {
      const Tensor strip = ag::slice(region, 2, 2 * i, 2);
      const Tensor hidden = ag::matmul(ag::mean(ag::reshape(strip, {2, c, -1}), 2), down[i]);
      for (double v : hidden.data()) ok &= std::abs(v) > kGap;
    }
    if (!ok) continue;
    auto f = [](auto& v) {
      PartitionAttentionWeights w;
      for (int i = 0; i < 3; ++i) {
        w.reduce[static_cast<size_t>(i)] = v[1 + i];
        w.expand[static_cast<size_t>(i)] = v[4 + i];
      }
      auto parts = partition_attention(v[0], w);
      return weighted(parts[0], 1) + weighted(parts[1], 2) + weighted(parts[2], 3);
    };
    return grad_check(f, {region, down[0], down[1], down[2], up[0], up[1], up[2]}).rel_error;
  }
}

// Gradient with respect to the affine parameters and the source map. Every
// sample point keeps a margin from the bilinear cell boundaries.
double sample_region_case(uint64_t seed) {
  Rng rng = seeded(seed, 7);
  const int64_t n = 2, c = 3, h = 6, w = 5, oh = 4, ow = 3;
  auto target = [](int64_t i, int64_t len) { return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(len - 1); };
  auto clear = [&](double pos) { return std::abs(pos - std::round(pos)) > 1e-4; };
  for (;;) {
    std::vector<double> p;
    for (int64_t b = 0; b < n; ++b) {
      p.push_back(rng.uniform(0.2, 0.9));
      p.push_back(rng.uniform(0.2, 0.9));
      p.push_back(rng.uniform(-0.3, 0.3));
      p.push_back(rng.uniform(-0.3, 0.3));
    }
    bool ok = true;
    for (int64_t b = 0; b < n && ok; ++b) {
      for (int64_t y = 0; y < oh; ++y) ok &= clear((p[b * 4 + 1] * target(y, oh) + p[b * 4 + 3] + 1) * 0.5 * (h - 1));
      for (int64_t x = 0; x < ow; ++x) ok &= clear((p[b * 4 + 0] * target(x, ow) + p[b * 4 + 2] + 1) * 0.5 * (w - 1));
    }
    if (!ok) continue;
    Tensor src = uniform(rng, {n, c, h, w}, -1, 1);
    return grad_check([&](auto& v) { return weighted(sample_region(v[0], v[1], oh, ow), seed); },
                      {src, Tensor::from({n, 4}, p)})
        .rel_error;
  }
}

}  // namespace

const std::vector<GradientCase>& gradient_cases() {
  static const std::vector<GradientCase> cases{
      {"distillation", 1e-5, distillation},       {"prior_p1", 1e-5, prior_p1},
      {"prior_p2", 1e-5, prior_p2},               {"triplet", 1e-5, triplet},
      {"cross_entropy", 1e-5, cross_entropy},     {"delta_activation", 1e-5, delta},
      {"partition_attention", 1e-5, partition},   {"sample_region", 1e-4, sample_region_case},
  };
  return cases;
}

}  // namespace v2e::check
