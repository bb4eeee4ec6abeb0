#include "v2e/model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "v2e/errors.hpp"
#include "v2e/losses.hpp"
#include "v2e/ops.hpp"

namespace v2e {

using ag::Tensor;

V2EModel::V2EModel(const ModelConfig& config, uint64_t seed) : config_(config) {
  config_.backbone.validate();
  if (config_.num_classes < 1) throw ConfigError("num_classes must be at least 1");
  if (!(config_.logit_scale > 0)) throw ConfigError("logit_scale must be positive");
  if (!(config_.gem_p > 0)) throw ConfigError(fmt::format("GeM exponent must be positive, got {}", config_.gem_p));
  Rng rng(seed);
  const int64_t c = config_.backbone.embed_channels;
  backbone_ = std::make_unique<Backbone>(config_.backbone, params_, rng, "backbone", group::kBackbone);
  gem_p_ = params_.add("stream1.gem_p", group::kStream1, {1}, {config_.gem_p});
  // Every stream is built regardless of its toggle so that the shared
  // parameters draw identical initial values across ablation variants.
  eva_ = std::make_unique<EvaStream>(config_.eva, c, config_.backbone.out_height(), config_.backbone.out_width(),
                                     params_, rng);
  if (!config_.adh.share_backbone)
    adh_backbone_ = std::make_unique<Backbone>(config_.backbone, params_, rng, "ep.backbone", group::kEp);
  adh_ = std::make_unique<AdhStream>(config_.adh, c, params_, rng);
  const int64_t d = embedding_dim();
  classifier_ = params_.add("classifier.w", group::kClassifier, {d, config_.num_classes},
                            normal_values(rng, d * config_.num_classes, 0.01));
}

int V2EModel::embedding_dim() const {
  const int c = config_.backbone.embed_channels;
  return config_.eva.enabled ? 4 * c : c;
}

std::vector<std::string> V2EModel::target_groups() const {
  std::vector<std::string> g{group::kBackbone, group::kStream1, group::kClassifier};
  if (config_.eva.enabled) g.push_back(group::kEva);
  return g;
}

std::vector<std::string> V2EModel::active_groups() const {
  auto g = target_groups();
  if (config_.adh.enabled) g.push_back(group::kEp);
  return g;
}

V2EModel::Output V2EModel::forward(const Tensor& images, bool with_adh) const {
  Output o;
  o.map = backbone_->forward(images);
  const int64_t n = o.map.dim(0), c = o.map.dim(1);
  o.f_t = ag::gem(ag::reshape(o.map, {n, c, -1}), gem_p_, kGemFloor);
  if (config_.eva.enabled) {
    o.eva = eva_->forward(o.map);
    o.f = fuse(o.f_t, o.eva->f_h, o.eva->f_e);
  } else {
    o.f = ag::l2_normalize(o.f_t, 1);
  }
  o.logits = ag::matmul(o.f, ag::l2_normalize(classifier_, 0)) * config_.logit_scale;
  if (config_.adh.enabled && with_adh) {
    Tensor source = adh_backbone_ ? adh_backbone_->forward(images) : o.map;
    o.adh = adh_->forward(source);
  }
  return o;
}

std::vector<FeatureVector> V2EModel::embed(const std::vector<const Image*>& images, int chunk) const {
  ag::NoGradGuard guard;
  std::vector<FeatureVector> out;
  out.reserve(images.size());
  const auto& b = config_.backbone;
  for (size_t start = 0; start < images.size(); start += static_cast<size_t>(chunk)) {
    const size_t end = std::min(images.size(), start + static_cast<size_t>(chunk));
    std::vector<const Image*> part(images.begin() + static_cast<std::ptrdiff_t>(start),
                                   images.begin() + static_cast<std::ptrdiff_t>(end));
    auto o = forward(image_batch(part, b.input_height, b.input_width), false);
    const int64_t d = o.f.dim(1);
    auto data = o.f.data();
    for (size_t i = 0; i < part.size(); ++i) {
      auto begin = data.begin() + static_cast<std::ptrdiff_t>(i * static_cast<size_t>(d));
      out.push_back(FeatureVector::make(std::vector<double>(begin, begin + d), true));
    }
  }
  return out;
}

std::vector<DistanceDecomposition> decompose_batch(const V2EModel& model, const std::vector<const Image*>& images,
                                                   std::vector<std::pair<int, int>>* pairs_out) {
  if (!model.config().adh.enabled) throw ConfigError("distance decomposition needs the attribute head enabled");
  ag::NoGradGuard guard;
  const auto& b = model.config().backbone;
  auto o = model.forward(image_batch(images, b.input_height, b.input_width), true);
  const auto pairs = all_pairs(static_cast<int>(images.size()));
  Tensor d = gather_pairs(embedding_distance_matrix(o.f), pairs);
  Tensor dk = gather_pair_rows(attribute_distance_matrix(o.adh->features), pairs);
  const int64_t m = dk.dim(1);
  std::vector<DistanceDecomposition> out;
  out.reserve(pairs.size());
  auto dv = d.data();
  auto kv = dk.data();
  for (size_t p = 0; p < pairs.size(); ++p) {
    auto begin = kv.begin() + static_cast<std::ptrdiff_t>(p * static_cast<size_t>(m));
    out.push_back(DistanceDecomposition::make(dv[p], std::vector<double>(begin, begin + m)));
  }
  if (pairs_out) *pairs_out = pairs;
  return out;
}

namespace {

std::vector<std::vector<double>> upsample_maps(const Tensor& attention, int64_t index, int height, int width) {
  const int64_t m = attention.dim(1), h = attention.dim(2), w = attention.dim(3);
  auto d = attention.data();
  std::vector<std::vector<double>> out;
  for (int64_t k = 0; k < m; ++k) {
    cv::Mat small(static_cast<int>(h), static_cast<int>(w), CV_64F);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        small.at<double>(static_cast<int>(y), static_cast<int>(x)) = d[static_cast<size_t>(((index * m + k) * h + y) * w + x)];
    cv::Mat big;
    cv::resize(small, big, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
    out.emplace_back(big.begin<double>(), big.end<double>());
  }
  return out;
}

}  // namespace

Explanation explain_pair(const V2EModel& model, const AttributeSchema& schema, const Image& x_i, const Image& x_j) {
  const auto& cfg = model.config();
  if (!cfg.adh.enabled) throw ConfigError("explanations need the attribute head enabled");
  if (schema.bit_count() != cfg.adh.attributes)
    throw ConfigError(fmt::format("schema has {} attributes, model has {}", schema.bit_count(), cfg.adh.attributes));
  ag::NoGradGuard guard;
  Explanation e;
  if (!model.trained()) e.warnings.push_back("model has not been trained; contributions are not meaningful");
  const auto& b = cfg.backbone;
  auto o = model.forward(image_batch({&x_i, &x_j}, b.input_height, b.input_width), true);
  const double total = embedding_distance_matrix(o.f).at({0, 1});
  Tensor dk = gather_pair_rows(attribute_distance_matrix(o.adh->features), {{0, 1}});
  e.decomposition = DistanceDecomposition::make(total, std::vector<double>(dk.data().begin(), dk.data().end()));
  const double denom = e.decomposition.reconstructed;
  for (int k = 0; k < cfg.adh.attributes; ++k) {
    const double v = e.decomposition.per_attribute[static_cast<size_t>(k)];
    e.ranked.push_back({k, schema.bit_name(k), v, denom > 0 ? v / denom : 0.0});
  }
  std::stable_sort(e.ranked.begin(), e.ranked.end(),
                   [](const auto& a, const auto& c) { return a.distance > c.distance; });
  e.height = x_i.height;
  e.width = x_i.width;
  e.saliency_i = upsample_maps(o.adh->attention, 0, e.height, e.width);
  e.saliency_j = upsample_maps(o.adh->attention, 1, e.height, e.width);
  return e;
}

namespace {

cv::Mat to_bgr8(const Image& im) {
  cv::Mat m(im.height, im.width, CV_8UC3);
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < 3; ++c)
        m.at<cv::Vec3b>(y, x)[2 - c] = cv::saturate_cast<uchar>(
            im.pixels[static_cast<size_t>((y * im.width + x) * 3 + c)] * 255.0);
  return m;
}

cv::Mat overlay(const cv::Mat& base, const std::vector<double>& sal, int h, int w) {
  const auto [lo, hi] = std::minmax_element(sal.begin(), sal.end());
  const double span = std::max(*hi - *lo, 1e-12);
  cv::Mat gray(h, w, CV_8U);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      gray.at<uchar>(y, x) = cv::saturate_cast<uchar>((sal[static_cast<size_t>(y * w + x)] - *lo) / span * 255.0);
  cv::Mat heat, out;
  cv::applyColorMap(gray, heat, cv::COLORMAP_JET);
  cv::addWeighted(base, 0.5, heat, 0.5, 0.0, out);
  return out;
}

}  // namespace

void write_explanation(const Explanation& e, const Image& x_i, const Image& x_j, const std::string& out_dir, int top) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  nlohmann::json j;
  j["total"] = e.decomposition.total;
  j["reconstructed"] = e.decomposition.reconstructed;
  j["warnings"] = e.warnings;
  auto& rows = j["attributes"] = nlohmann::json::array();
  for (const auto& r : e.ranked) rows.push_back({{"bit", r.bit}, {"name", r.name}, {"distance", r.distance}, {"share", r.share}});
  std::ofstream(fs::path(out_dir) / "explanation.json") << j.dump(2) << "\n";

  std::ofstream txt(fs::path(out_dir) / "explanation.txt");
  txt << fmt::format("total distance {:.6f}  reconstructed {:.6f}\n", e.decomposition.total,
                     e.decomposition.reconstructed);
  for (const auto& w : e.warnings) txt << "warning: " << w << "\n";
  txt << fmt::format("{:>4}  {:<36} {:>12} {:>8}\n", "rank", "attribute", "d_k", "share");
  for (size_t r = 0; r < e.ranked.size(); ++r)
    txt << fmt::format("{:>4}  {:<36} {:>12.6f} {:>7.2f}%\n", r + 1, e.ranked[r].name, e.ranked[r].distance,
                       100.0 * e.ranked[r].share);

  // Grid: column 0 holds the inputs, then one column per top attribute.
  const int n = std::min<int>(top, static_cast<int>(e.ranked.size()));
  const int h = e.height, w = e.width, label_h = 14;
  cv::Mat bi = to_bgr8(x_i), bj = to_bgr8(x_j);
  cv::Mat grid(2 * h + label_h, (n + 1) * w, CV_8UC3, cv::Scalar(255, 255, 255));
  bi.copyTo(grid(cv::Rect(0, label_h, w, h)));
  bj.copyTo(grid(cv::Rect(0, label_h + h, w, h)));
  for (int c = 0; c < n; ++c) {
    const auto& r = e.ranked[static_cast<size_t>(c)];
    overlay(bi, e.saliency_i[static_cast<size_t>(r.bit)], h, w).copyTo(grid(cv::Rect((c + 1) * w, label_h, w, h)));
    overlay(bj, e.saliency_j[static_cast<size_t>(r.bit)], h, w).copyTo(grid(cv::Rect((c + 1) * w, label_h + h, w, h)));
    cv::putText(grid, std::to_string(c + 1), cv::Point((c + 1) * w + 2, label_h - 3), cv::FONT_HERSHEY_PLAIN, 0.8,
                cv::Scalar(0, 0, 0));
  }
  cv::imwrite((fs::path(out_dir) / "saliency.png").string(), grid);
}

}  // namespace v2e
