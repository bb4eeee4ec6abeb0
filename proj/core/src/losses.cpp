#include "v2e/losses.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "v2e/errors.hpp"
#include "v2e/ops.hpp"

namespace v2e {

using ag::Tensor;

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kShareFloor = 1e-12;

double exclusive_fraction(const PairAttributeContext& ctx, double v) {
  return std::pow(static_cast<double>(ctx.exclusive) / ctx.total, v);
}

std::vector<double> smoothed_targets(int classes, int label, double smoothing) {
  std::vector<double> t(static_cast<size_t>(classes), smoothing / classes);
  t[static_cast<size_t>(label)] += 1.0 - smoothing;
  return t;
}

void check_labels(const std::vector<int>& labels, int64_t rows, int64_t classes) {
  if (static_cast<int64_t>(labels.size()) != rows)
    throw ConfigError(fmt::format("{} labels for {} samples", labels.size(), rows));
  for (int l : labels)
    if (l < 0 || l >= classes) throw ConfigError(fmt::format("label {} outside [0,{})", l, classes));
}

Tensor smoothed_target_tensor(const std::vector<int>& labels, int64_t classes, double smoothing) {
  std::vector<double> t;
  t.reserve(labels.size() * static_cast<size_t>(classes));
  for (int l : labels) {
    auto row = smoothed_targets(static_cast<int>(classes), l, smoothing);
    t.insert(t.end(), row.begin(), row.end());
  }
  return Tensor::from({static_cast<int64_t>(labels.size()), classes}, std::move(t));
}

}  // namespace

void LossWeights::validate() const {
  if (alpha < 0 || beta < 0) throw ConfigError("loss weights alpha and beta must be non-negative");
  if (!(v > 0 && v <= 1)) throw ConfigError(fmt::format("balancing exponent v must lie in (0,1], got {}", v));
  if (!(margin > 0)) throw ConfigError(fmt::format("triplet margin must be positive, got {}", margin));
  if (label_smoothing < 0 || label_smoothing >= 1) throw ConfigError("label smoothing must lie in [0,1)");
}

PairAttributeContext attribute_xor(const AttributeVector& a, const AttributeVector& b) {
  if (a.bits.size() != b.bits.size())
    throw ConfigError(fmt::format("attribute vectors differ in length: {} vs {}", a.bits.size(), b.bits.size()));
  PairAttributeContext ctx;
  ctx.total = static_cast<int>(a.bits.size());
  ctx.xor_bits.resize(a.bits.size());
  for (size_t i = 0; i < a.bits.size(); ++i) {
    ctx.xor_bits[i] = static_cast<uint8_t>((a.bits[i] != 0) != (b.bits[i] != 0));
    ctx.exclusive += ctx.xor_bits[i];
  }
  return ctx;
}

double triplet_loss(double d_ap, double d_an, double margin) { return std::max(margin + d_ap - d_an, 0.0); }

double cross_entropy_loss(const std::vector<std::vector<double>>& q, const std::vector<int>& labels,
                          double smoothing) {
  if (q.empty()) return 0.0;
  check_labels(labels, static_cast<int64_t>(q.size()), static_cast<int64_t>(q[0].size()));
  double total = 0;
  for (size_t i = 0; i < q.size(); ++i) {
    auto t = smoothed_targets(static_cast<int>(q[i].size()), labels[i], smoothing);
    for (size_t k = 0; k < q[i].size(); ++k)
      if (t[k] > 0) total -= t[k] * std::log(std::max(q[i][k], kProbFloor));
  }
  return total / static_cast<double>(q.size());
}

double metric_distillation_loss(const DistanceDecomposition& dec) { return std::abs(dec.total - dec.reconstructed); }

double prior_lambda(int m, int m_e, double v) {
  if (m_e <= 0 || m_e >= m) throw ConfigError(fmt::format("lambda undefined for M={}, M_E={}", m, m_e));
  const double x = std::pow(static_cast<double>(m_e) / m, v);
  return 0.5 * std::log((m - m_e * x) / (m_e * (1.0 - x)));
}

double prior_loss_p1(const DistanceDecomposition& dec, const PairAttributeContext& ctx, double v) {
  if (ctx.degenerate()) return 0.0;
  const double x = exclusive_fraction(ctx, v);
  const double dhat = std::max(dec.reconstructed, kShareFloor);
  double exc = 0, com = 0;
  for (size_t k = 0; k < dec.per_attribute.size(); ++k)
    (ctx.xor_bits[k] ? exc : com) += dec.per_attribute[k] / dhat;
  return std::max(0.0, x - exc) + std::max(0.0, com - (1.0 - x));
}

double prior_loss_p2(const DistanceDecomposition& dec, const PairAttributeContext& ctx, double v) {
  if (ctx.degenerate()) return 0.0;
  const double x = exclusive_fraction(ctx, v);
  const double lambda = prior_lambda(ctx.total, ctx.exclusive, v);
  const double thr_e = std::exp(-lambda) * x / ctx.exclusive;
  const double thr_c = std::exp(lambda) * (1.0 - x) / (ctx.total - ctx.exclusive);
  const double dhat = std::max(dec.reconstructed, kShareFloor);
  double loss = 0;
  for (size_t k = 0; k < dec.per_attribute.size(); ++k) {
    const double s = dec.per_attribute[k] / dhat;
    loss += ctx.xor_bits[k] ? std::max(0.0, thr_e - s) : std::max(0.0, s - thr_c);
  }
  return loss;
}

void check_finite(const LossComponents& c) {
  const std::pair<const char*, double> parts[] = {
      {"L_d", c.distill}, {"L_p1", c.p1}, {"L_p2", c.p2}, {"L_triplet", c.triplet}, {"L_ce", c.ce}};
  for (const auto& [name, value] : parts)
    if (!std::isfinite(value)) throw RuntimeFault(fmt::format("loss component {} is not finite ({})", name, value));
}

double total_loss(const LossComponents& c, const LossWeights& w) {
  check_finite(c);
  return c.distill + w.weight_p1() * c.p1 + w.weight_p2() * c.p2 + w.weight_triplet() * c.triplet +
         w.weight_ce() * c.ce;
}

Tensor triplet_loss(const Tensor& d, const std::vector<int>& labels, double margin) {
  const int64_t n = d.dim(0);
  if (d.rank() != 2 || d.dim(1) != n || static_cast<int64_t>(labels.size()) != n)
    throw ConfigError("triplet loss needs a square distance matrix matching the labels");
  std::vector<int64_t> anchors;
  std::vector<double> pos, neg_pen;
  for (int64_t i = 0; i < n; ++i) {
    bool has_pos = false, has_neg = false;
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      (labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(j)] ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) continue;
    anchors.push_back(i);
    for (int64_t j = 0; j < n; ++j) {
      const bool same = labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(j)];
      pos.push_back(same && j != i ? 1.0 : 0.0);
      // Large offset removes non-negatives from the minimum.
      neg_pen.push_back(same ? 1e6 : 0.0);
    }
  }
  if (anchors.empty()) return Tensor::scalar(0.0);
  const int64_t a = static_cast<int64_t>(anchors.size());
  Tensor rows = ag::index_select(d, anchors);  // [A,N]
  Tensor ap = ag::max(rows * Tensor::from({a, n}, std::move(pos)), 1);
  Tensor an = -ag::max(-(rows + Tensor::from({a, n}, std::move(neg_pen))), 1);
  return ag::mean(ag::relu(margin + ap - an));
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels, double smoothing) {
  check_labels(labels, logits.dim(0), logits.dim(1));
  Tensor ls = ag::maximum(ag::log_softmax(logits, 1), Tensor::scalar(std::log(kProbFloor)));
  Tensor t = smoothed_target_tensor(labels, logits.dim(1), smoothing);
  return -ag::sum(ls * t) * (1.0 / static_cast<double>(logits.dim(0)));
}

Tensor cross_entropy_from_probs(const Tensor& q, const std::vector<int>& labels, double smoothing) {
  check_labels(labels, q.dim(0), q.dim(1));
  Tensor lq = ag::log(ag::maximum(q, Tensor::scalar(kProbFloor)));
  Tensor t = smoothed_target_tensor(labels, q.dim(1), smoothing);
  return -ag::sum(lq * t) * (1.0 / static_cast<double>(q.dim(0)));
}

Tensor metric_distillation_loss(const Tensor& d, const Tensor& dk) {
  return ag::mean(ag::abs(ag::reshape(d, {-1}) - ag::sum(dk, 1)));
}

namespace {

struct PriorRows {
  std::vector<int64_t> rows;
  std::vector<double> xor_mask, x, lambda;
  int m = 0;
};

PriorRows prior_rows(const Tensor& dk, const std::vector<PairAttributeContext>& ctx, double v) {
  if (dk.rank() != 2 || dk.dim(0) != static_cast<int64_t>(ctx.size()))
    throw ConfigError(fmt::format("pair distances {} do not match {} pair contexts", ag::shape_str(dk.shape()),
                                  ctx.size()));
  PriorRows r;
  r.m = static_cast<int>(dk.dim(1));
  for (size_t p = 0; p < ctx.size(); ++p) {
    if (ctx[p].total != r.m) throw ConfigError("pair context length differs from attribute count");
    if (ctx[p].degenerate()) continue;
    r.rows.push_back(static_cast<int64_t>(p));
    for (auto b : ctx[p].xor_bits) r.xor_mask.push_back(b);
    r.x.push_back(exclusive_fraction(ctx[p], v));
    r.lambda.push_back(prior_lambda(ctx[p].total, ctx[p].exclusive, v));
  }
  return r;
}

Tensor shares(const Tensor& dk_rows) {
  Tensor dhat = ag::maximum(ag::sum(dk_rows, 1, true), Tensor::scalar(kShareFloor));
  return dk_rows / dhat;
}

}  // namespace

Tensor prior_loss_p1(const Tensor& dk, const std::vector<PairAttributeContext>& ctx, double v) {
  auto r = prior_rows(dk, ctx, v);
  if (r.rows.empty()) return Tensor::scalar(0.0);
  const int64_t p = static_cast<int64_t>(r.rows.size());
  Tensor s = shares(ag::index_select(dk, r.rows));
  Tensor mask = Tensor::from({p, r.m}, std::move(r.xor_mask));
  Tensor exc = ag::sum(s * mask, 1);
  Tensor com = ag::sum(s * (1.0 - mask), 1);
  Tensor x = Tensor::from({p}, std::move(r.x));
  return ag::mean(ag::relu(x - exc) + ag::relu(com - (1.0 - x)));
}

Tensor prior_loss_p2(const Tensor& dk, const std::vector<PairAttributeContext>& ctx, double v) {
  auto r = prior_rows(dk, ctx, v);
  if (r.rows.empty()) return Tensor::scalar(0.0);
  const int64_t p = static_cast<int64_t>(r.rows.size());
  std::vector<double> thr_e(static_cast<size_t>(p)), thr_c(static_cast<size_t>(p));
  for (int64_t i = 0; i < p; ++i) {
    const auto& c = ctx[static_cast<size_t>(r.rows[static_cast<size_t>(i)])];
    const double x = r.x[static_cast<size_t>(i)], lam = r.lambda[static_cast<size_t>(i)];
    thr_e[static_cast<size_t>(i)] = std::exp(-lam) * x / c.exclusive;
    thr_c[static_cast<size_t>(i)] = std::exp(lam) * (1.0 - x) / (c.total - c.exclusive);
  }
  Tensor s = shares(ag::index_select(dk, r.rows));
  Tensor mask = Tensor::from({p, r.m}, std::move(r.xor_mask));
  Tensor te = Tensor::from({p, 1}, std::move(thr_e));
  Tensor tc = Tensor::from({p, 1}, std::move(thr_c));
  Tensor per = ag::sum(mask * ag::relu(te - s) + (1.0 - mask) * ag::relu(s - tc), 1);
  return ag::mean(per);
}

std::vector<std::pair<int, int>> all_pairs(int n) {
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<size_t>(n) * static_cast<size_t>(std::max(n - 1, 0)) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) out.emplace_back(i, j);
  return out;
}

Tensor gather_pairs(const Tensor& matrix, const std::vector<std::pair<int, int>>& pairs) {
  const int64_t n = matrix.dim(1);
  std::vector<int64_t> idx;
  idx.reserve(pairs.size());
  for (auto [i, j] : pairs) idx.push_back(i * n + j);
  return ag::index_select(ag::reshape(matrix, {-1}), idx);
}

Tensor gather_pair_rows(const Tensor& stack, const std::vector<std::pair<int, int>>& pairs) {
  const int64_t m = stack.dim(0), n = stack.dim(2);
  Tensor flat = ag::transpose(ag::reshape(stack, {m, -1}), 0, 1);  // [N*N, M]
  std::vector<int64_t> idx;
  idx.reserve(pairs.size());
  for (auto [i, j] : pairs) idx.push_back(i * n + j);
  return ag::index_select(flat, idx);
}

}  // namespace v2e
