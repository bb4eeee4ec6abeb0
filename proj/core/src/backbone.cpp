#include "v2e/backbone.hpp"

#include <cmath>

#include <fmt/format.h>

#include "v2e/errors.hpp"
#include "v2e/ops.hpp"

namespace v2e {

using ag::Tensor;

std::string_view backbone_kind_name(BackboneKind k) {
  return k == BackboneKind::ToyConv ? "toy-conv" : "transformer-patch";
}

BackboneKind parse_backbone_kind(std::string_view s) {
  if (s == "toy-conv" || s == "ToyConv") return BackboneKind::ToyConv;
  if (s == "transformer-patch" || s == "TransformerPatch" || s == "vit") return BackboneKind::TransformerPatch;
  throw ConfigError(fmt::format("unknown backbone kind '{}'", s));
}

void BackboneConfig::validate() const {
  if (embed_channels <= 0 || embed_channels % 8 != 0)
    throw ConfigError(fmt::format("embed_channels must be a positive multiple of 8, got {}", embed_channels));
  if (patch_size <= 0) throw ConfigError("patch_size must be positive");
  if (input_height < 16 || input_width < 16)
    throw ConfigError(fmt::format("input resolution {}x{} is below 16x16", input_height, input_width));
  if (input_height % patch_size != 0 || input_width % patch_size != 0)
    throw ConfigError(fmt::format("input {}x{} is not divisible by patch size {}", input_height, input_width,
                                  patch_size));
  if ((grid_height && grid_height != out_height()) || (grid_width && grid_width != out_width()))
    throw ConfigError(fmt::format("output grid {}x{} does not match input {}x{} with patch {} (expected {}x{})",
                                  grid_height, grid_width, input_height, input_width, patch_size, out_height(),
                                  out_width()));
  if (kind == BackboneKind::ToyConv) {
    if (patch_size < 2 || (patch_size & (patch_size - 1)) != 0)
      throw ConfigError(fmt::format("toy-conv stride must be a power of two >= 2, got {}", patch_size));
    if (toy_extra_convs < 0) throw ConfigError("toy_extra_convs must be non-negative");
  } else {
    if (depth < 0) throw ConfigError("depth must be non-negative");
    if (heads <= 0 || embed_channels % heads != 0)
      throw ConfigError(fmt::format("{} heads do not divide {} channels", heads, embed_channels));
    if (mlp_ratio <= 0) throw ConfigError("mlp_ratio must be positive");
  }
}

Backbone::Backbone(const BackboneConfig& config, ParameterStore& store, Rng& rng, const std::string& prefix,
                   const std::string& group)
    : config_(config) {
  config_.validate();
  const int64_t c = config_.embed_channels;
  auto zeros = [](int64_t n) { return std::vector<double>(static_cast<size_t>(n), 0.0); };
  auto ones = [](int64_t n) { return std::vector<double>(static_cast<size_t>(n), 1.0); };

  if (config_.kind == BackboneKind::ToyConv) {
    int stages = 0;
    for (int s = config_.patch_size; s > 1; s >>= 1) ++stages;
    int64_t in = 3;
    int idx = 0;
    for (int s = 0; s < stages; ++s) {
      const int64_t out = std::max<int64_t>(8, c >> (stages - 1 - s));
      for (int e = 0; e <= config_.toy_extra_convs; ++e) {
        const int stride = e == 0 ? 2 : 1;
        const auto name = fmt::format("{}.conv{}", prefix, idx++);
        Conv conv;
        conv.w = store.add(name + ".w", group, {out, in, 3, 3}, he_normal(rng, out * in * 9, in * 9));
        conv.b = store.add(name + ".b", group, {out}, zeros(out));
        conv.stride = stride;
        convs_.push_back(conv);
        in = out;
      }
    }
    return;
  }

  const int64_t p = config_.patch_size;
  const int64_t tokens = static_cast<int64_t>(config_.out_height()) * config_.out_width();
  const int64_t hidden = c * config_.mlp_ratio;
  patch_w_ = store.add(prefix + ".patch.w", group, {c, 3, p, p}, normal_values(rng, c * 3 * p * p, 0.02));
  patch_b_ = store.add(prefix + ".patch.b", group, {c}, zeros(c));
  pos_ = store.add(prefix + ".pos", group, {1, tokens, c}, normal_values(rng, tokens * c, 0.02));
  for (int i = 0; i < config_.depth; ++i) {
    const auto n = fmt::format("{}.block{}", prefix, i);
    Block b;
    b.ln1_g = store.add(n + ".ln1.g", group, {c}, ones(c));
    b.ln1_b = store.add(n + ".ln1.b", group, {c}, zeros(c));
    b.qkv_w = store.add(n + ".qkv.w", group, {c, 3 * c}, normal_values(rng, 3 * c * c, 0.02));
    b.qkv_b = store.add(n + ".qkv.b", group, {3 * c}, zeros(3 * c));
    b.proj_w = store.add(n + ".proj.w", group, {c, c}, normal_values(rng, c * c, 0.02));
    b.proj_b = store.add(n + ".proj.b", group, {c}, zeros(c));
    b.ln2_g = store.add(n + ".ln2.g", group, {c}, ones(c));
    b.ln2_b = store.add(n + ".ln2.b", group, {c}, zeros(c));
    b.fc1_w = store.add(n + ".fc1.w", group, {c, hidden}, normal_values(rng, c * hidden, 0.02));
    b.fc1_b = store.add(n + ".fc1.b", group, {hidden}, zeros(hidden));
    b.fc2_w = store.add(n + ".fc2.w", group, {hidden, c}, normal_values(rng, c * hidden, 0.02));
    b.fc2_b = store.add(n + ".fc2.b", group, {c}, zeros(c));
    blocks_.push_back(std::move(b));
  }
  final_g_ = store.add(prefix + ".norm.g", group, {c}, ones(c));
  final_b_ = store.add(prefix + ".norm.b", group, {c}, zeros(c));
}

Tensor Backbone::forward(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != config_.input_height ||
      images.dim(3) != config_.input_width)
    throw ConfigError(fmt::format("backbone expects [N,3,{},{}] input, got {}", config_.input_height,
                                  config_.input_width, ag::shape_str(images.shape())));
  return config_.kind == BackboneKind::ToyConv ? forward_toy(images) : forward_vit(images);
}

Tensor Backbone::forward_toy(const Tensor& x) const {
  Tensor h = x;
  for (const auto& conv : convs_) h = ag::relu(ag::conv2d(h, conv.w, conv.b, conv.stride, 1));
  return h;
}

Tensor Backbone::forward_vit(const Tensor& x) const {
  const int64_t n = x.dim(0);
  const int64_t c = config_.embed_channels;
  const int64_t gh = config_.out_height(), gw = config_.out_width();
  const int64_t t = gh * gw;
  const int64_t heads = config_.heads;
  const int64_t hd = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor tok = ag::conv2d(x, patch_w_, patch_b_, config_.patch_size, 0);  // [N,C,gh,gw]
  tok = ag::permute(ag::reshape(tok, {n, c, t}), {0, 2, 1}) + pos_;     // [N,T,C]

  auto split_heads = [&](const Tensor& z) {  // [N,T,C] -> [N*H,T,d]
    return ag::reshape(ag::permute(ag::reshape(z, {n, t, heads, hd}), {0, 2, 1, 3}), {n * heads, t, hd});
  };
  for (const auto& b : blocks_) {
    Tensor y = ag::layer_norm(tok, b.ln1_g, b.ln1_b);
    Tensor qkv = linear(y, b.qkv_w, b.qkv_b);  // [N,T,3C]
    Tensor q = split_heads(ag::slice(qkv, 2, 0, c));
    Tensor k = split_heads(ag::slice(qkv, 2, c, c));
    Tensor v = split_heads(ag::slice(qkv, 2, 2 * c, c));
    Tensor att = ag::softmax(ag::matmul(q, ag::transpose(k, 1, 2)) * scale, -1);
    Tensor o = ag::matmul(att, v);  // [N*H,T,d]
    o = ag::reshape(ag::permute(ag::reshape(o, {n, heads, t, hd}), {0, 2, 1, 3}), {n, t, c});
    tok = tok + linear(o, b.proj_w, b.proj_b);
    y = ag::layer_norm(tok, b.ln2_g, b.ln2_b);
    tok = tok + linear(ag::gelu(linear(y, b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b);
  }
  tok = ag::layer_norm(tok, final_g_, final_b_);
  return ag::reshape(ag::permute(tok, {0, 2, 1}), {n, c, gh, gw});
}

Tensor image_batch(const std::vector<const Image*>& images, int height, int width) {
  const int64_t n = static_cast<int64_t>(images.size());
  const int64_t plane = static_cast<int64_t>(height) * width;
  std::vector<double> v(static_cast<size_t>(n * 3 * plane));
  for (int64_t i = 0; i < n; ++i) {
    const Image& im = *images[static_cast<size_t>(i)];
    if (im.height != height || im.width != width || im.pixels.size() != static_cast<size_t>(plane * 3))
      throw ConfigError(fmt::format("image {} is {}x{}, expected {}x{}", i, im.height, im.width, height, width));
    for (int64_t p = 0; p < plane; ++p)
      for (int64_t ch = 0; ch < 3; ++ch)
        v[static_cast<size_t>((i * 3 + ch) * plane + p)] = (im.pixels[static_cast<size_t>(p * 3 + ch)] - 0.5) / 0.25;
  }
  return Tensor::from({n, 3, height, width}, std::move(v));
}

std::vector<FeatureMap> extract_feature_map(const Backbone& backbone, const std::vector<const Image*>& images) {
  ag::NoGradGuard guard;
  const auto& cfg = backbone.config();
  std::vector<FeatureMap> out;
  if (images.empty()) return out;
  Tensor f = backbone.forward(image_batch(images, cfg.input_height, cfg.input_width));
  const int64_t c = f.dim(1), h = f.dim(2), w = f.dim(3);
  const int64_t per = c * h * w;
  auto d = f.data();
  for (size_t i = 0; i < images.size(); ++i) {
    auto begin = d.begin() + static_cast<std::ptrdiff_t>(i) * per;
    out.push_back(FeatureMap::make(c, h, w, std::vector<double>(begin, begin + per)));
  }
  return out;
}

FeatureVector gem_pool(const FeatureMap& map, double p, double eps) {
  if (!(p > 0.0) || !std::isfinite(p)) throw ConfigError(fmt::format("GeM exponent must be positive, got {}", p));
  const int64_t hw = static_cast<int64_t>(map.height) * map.width;
  std::vector<double> out(static_cast<size_t>(map.channels));
  for (int64_t c = 0; c < map.channels; ++c) {
    double acc = 0;
    for (int64_t i = 0; i < hw; ++i) acc += std::pow(std::max(map.data[static_cast<size_t>(c * hw + i)], eps), p);
    out[static_cast<size_t>(c)] = std::pow(acc / static_cast<double>(hw), 1.0 / p);
  }
  return FeatureVector::make(std::move(out), false);
}

double pairwise_distance(const FeatureVector& a, const FeatureVector& b) {
  if (a.data.size() != b.data.size())
    throw ConfigError(fmt::format("feature dimensions differ: {} vs {}", a.data.size(), b.data.size()));
  auto norm = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::max(std::sqrt(s), 1e-12);
  };
  const double na = norm(a.data), nb = norm(b.data);
  double s = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] / na - b.data[i] / nb;
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace v2e
