#include "v2e/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "v2e/augment.hpp"
#include "v2e/errors.hpp"
#include "v2e/metrics.hpp"
#include "v2e/ops.hpp"

namespace v2e {

using ag::Tensor;

IdentitySampler::IdentitySampler(const DatasetSplit& split, int p, int k, uint64_t seed) : p_(p), k_(k), rng_(seed) {
  if (p < 1 || k < 1) throw ConfigError("sampler needs p >= 1 and k >= 1");
  for (size_t i = 0; i < split.records.size(); ++i) by_id_[split.records[i].person_id].push_back(i);
  for (const auto& [id, _] : by_id_) ids_.push_back(id);
  if (static_cast<int>(ids_.size()) < p)
    throw ConfigError(fmt::format("sampler needs at least {} identities, split has {}", p, ids_.size()));
}

int IdentitySampler::batches_per_epoch() const {
  return static_cast<int>((ids_.size() + static_cast<size_t>(p_) - 1) / static_cast<size_t>(p_));
}

std::vector<std::vector<size_t>> IdentitySampler::epoch() {
  std::vector<int> order = ids_;
  for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<size_t>(rng_.below(static_cast<int>(i)))]);
  std::vector<std::vector<size_t>> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(p_)) {
    std::vector<int> chosen(order.begin() + static_cast<std::ptrdiff_t>(start),
                            order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + p_)));
    // Top up a short final batch with identities not already in it.
    while (static_cast<int>(chosen.size()) < p_) {
      const int id = ids_[static_cast<size_t>(rng_.below(static_cast<int>(ids_.size())))];
      if (std::find(chosen.begin(), chosen.end(), id) == chosen.end()) chosen.push_back(id);
    }
    std::vector<size_t> batch;
    for (int id : chosen) {
      std::vector<size_t> pool = by_id_.at(id);
      if (static_cast<int>(pool.size()) >= k_) {
        for (int i = 0; i < k_; ++i)
          std::swap(pool[static_cast<size_t>(i)],
                    pool[static_cast<size_t>(i + rng_.below(static_cast<int>(pool.size()) - i))]);
        batch.insert(batch.end(), pool.begin(), pool.begin() + k_);
      } else {
        for (int i = 0; i < k_; ++i) batch.push_back(pool[static_cast<size_t>(rng_.below(static_cast<int>(pool.size())))]);
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

double learning_rate(const OptimizerConfig& cfg, int64_t step, int64_t total_steps) {
  total_steps = std::max<int64_t>(total_steps, 1);
  const int64_t warm = static_cast<int64_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warm) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  const double progress = static_cast<double>(step - warm) / static_cast<double>(std::max<int64_t>(total_steps - warm, 1));
  return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * std::min(progress, 1.0)));
}

Optimizer::Optimizer(const OptimizerConfig& cfg, std::vector<Tensor> params) : cfg_(cfg), params_(std::move(params)) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    if (cfg_.kind == OptimizerKind::Adam) v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
  }
}

void Optimizer::step(double lr, double grad_scale) {
  ++t_;
  const double inv = 1.0 / grad_scale;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    ag::Node* node = params_[i].node();
    if (node->grad.empty()) continue;
    // Decay only weight matrices and kernels.
    const double wd = params_[i].rank() >= 2 ? cfg_.weight_decay : 0.0;
    auto& m = m_[i];
    for (size_t j = 0; j < node->value.size(); ++j) {
      const double g = node->grad[j] * inv + wd * node->value[j];
      if (cfg_.kind == OptimizerKind::Sgd) {
        m[j] = cfg_.momentum * m[j] + g;
        node->value[j] -= lr * m[j];
      } else {
        auto& v = v_[i];
        m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * g * g;
        node->value[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.adam_eps);
      }
    }
  }
}

namespace {

bool grads_finite(const std::vector<Tensor>& params) {
  for (const auto& p : params)
    for (double g : p.node()->grad)
      if (!std::isfinite(g)) return false;
  return true;
}

constexpr int kScaleGrowthInterval = 200;
constexpr double kMaxLossScale = 65536.0;

}  // namespace

StepResult train_step(const TrainBatch& batch, V2EModel& model, const RunConfig& cfg, Optimizer& opt, double lr,
                      StepState& state, TrainStage stage) {
  const int n = static_cast<int>(batch.images.size());
  if (n < 2 || static_cast<int>(batch.labels.size()) != n || static_cast<int>(batch.attributes.size()) != n)
    throw ConfigError("training batch needs at least 2 samples with labels and attributes");
  StepResult r;
  r.lr = lr;
  if (!cfg.amp) state.loss_scale = 1.0;
  r.loss_scale = state.loss_scale;
  const auto& mc = model.config();
  const auto& w = cfg.loss;
  const bool use_ep = mc.adh.enabled && stage != TrainStage::TargetOnly;
  const bool use_target = stage != TrainStage::AttributeOnly;
  model.params().zero_grad();

  Tensor total;
  {
    std::optional<ag::HalfPrecisionGuard> half;
    if (cfg.amp) half.emplace();
    auto o = model.forward(image_batch(batch.images, mc.backbone.input_height, mc.backbone.input_width), use_ep);
    Tensor dmat = embedding_distance_matrix(o.f);
    Tensor zero = Tensor::scalar(0.0);
    Tensor tri = use_target ? triplet_loss(dmat, batch.labels, w.margin) : zero;
    Tensor ce = use_target ? cross_entropy_loss(o.logits, batch.labels, w.label_smoothing) : zero;
    Tensor ld = zero, p1 = zero, p2 = zero;
    if (use_ep) {
      const auto pairs = all_pairs(n);
      r.pairs = static_cast<int>(pairs.size());
      Tensor d = gather_pairs(use_target ? dmat : dmat.detach(), pairs);
      Tensor dk = gather_pair_rows(attribute_distance_matrix(o.adh->features), pairs);
      std::vector<PairAttributeContext> ctx;
      ctx.reserve(pairs.size());
      for (auto [i, j] : pairs)
        ctx.push_back(attribute_xor(*batch.attributes[static_cast<size_t>(i)], *batch.attributes[static_cast<size_t>(j)]));
      ld = metric_distillation_loss(d, dk);
      p1 = prior_loss_p1(dk, ctx, w.v);
      p2 = prior_loss_p2(dk, ctx, w.v);
    }
    r.components = {ld.item(), p1.item(), p2.item(), tri.item(), ce.item()};
    total = ld + w.weight_p1() * p1 + w.weight_p2() * p2 + w.weight_triplet() * tri + w.weight_ce() * ce;
    if (cfg.amp) {
      const auto& c = r.components;
      if (!std::isfinite(c.distill + c.p1 + c.p2 + c.triplet + c.ce) || !std::isfinite(total.item())) {
        r.skipped = true;
      } else {
        (total * state.loss_scale).backward();
      }
    } else {
      check_finite(r.components);
      total.backward();
    }
  }
  if (!r.skipped && cfg.amp && !grads_finite(opt.params())) r.skipped = true;
  if (r.skipped) {
    state.loss_scale = std::max(state.loss_scale * 0.5, 1.0 / 65536.0);
    state.good_steps = 0;
    model.params().zero_grad();
    r.total = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.total = total_loss(r.components, w);
  if (!cfg.amp && !grads_finite(opt.params())) throw RuntimeFault("non-finite gradient in full-precision step");
  opt.step(lr, state.loss_scale);
  if (cfg.amp && ++state.good_steps >= kScaleGrowthInterval) {
    state.loss_scale = std::min(state.loss_scale * 2.0, kMaxLossScale);
    state.good_steps = 0;
  }
  return r;
}

std::string step_log_row(int epoch, int step, const StepResult& r) {
  nlohmann::json j{{"epoch", epoch},
                   {"step", step},
                   {"lr", r.lr},
                   {"L_d", r.components.distill},
                   {"L_p1", r.components.p1},
                   {"L_p2", r.components.p2},
                   {"L_triplet", r.components.triplet},
                   {"L_ce", r.components.ce},
                   {"total", r.skipped ? nlohmann::json(nullptr) : nlohmann::json(r.total)},
                   {"pairs", r.pairs},
                   {"loss_scale", r.loss_scale},
                   {"skipped", r.skipped}};
  return j.dump();
}

TrainOutcome train_model(const RunConfig& cfg_in, const DatasetSplit& train, std::ostream* log,
                         const ProgressFn& progress) {
  RunConfig cfg = cfg_in;
  const auto ids = train.identities();
  cfg.model.num_classes = static_cast<int>(ids.size());
  cfg.validate();
  TrainOutcome out;
  for (size_t i = 0; i < ids.size(); ++i) out.class_of_id[ids[i]] = static_cast<int>(i);
  for (const auto& rec : train.records)
    if (!train.attributes.count(rec.person_id))
      throw ConfigError(fmt::format("identity {} has no attribute annotation", rec.person_id));
  out.model = std::make_unique<V2EModel>(cfg.model, cfg.seed);
  V2EModel& model = *out.model;
  IdentitySampler sampler(train, cfg.sampler.p, cfg.sampler.k, mix64(cfg.seed ^ 0x5a3b1e));

  struct Stage {
    TrainStage kind;
    int epochs;
    std::vector<std::string> groups;
  };
  std::vector<Stage> stages;
  if (cfg.freeze_target && cfg.model.adh.enabled) {
    const int first = std::clamp(static_cast<int>(std::lround(cfg.epochs * cfg.target_fraction)), 1,
                                 std::max(cfg.epochs - 1, 1));
    stages.push_back({TrainStage::TargetOnly, first, model.target_groups()});
    stages.push_back({TrainStage::AttributeOnly, std::max(cfg.epochs - first, 1), {group::kEp}});
  } else {
    stages.push_back({TrainStage::Joint, cfg.epochs, model.active_groups()});
  }

  StepState state{cfg.initial_loss_scale, 0};
  Rng aug_rng(mix64(cfg.seed ^ 0xa06e));
  std::vector<Image> augmented;
  int epoch = 0, global = 0;
  for (const auto& st : stages) {
    Optimizer opt(cfg.optimizer, model.params().tensors_in(st.groups));
    const int64_t total_steps = static_cast<int64_t>(st.epochs) * sampler.batches_per_epoch();
    int64_t s = 0;
    for (int e = 0; e < st.epochs; ++e, ++epoch) {
      for (const auto& idx : sampler.epoch()) {
        TrainBatch b;
        augmented.clear();
        augmented.reserve(idx.size());
        for (size_t i : idx) {
          const auto& rec = train.records[i];
          if (cfg.augment.enabled) {
            augmented.push_back(augment_image(rec.image, cfg.augment, aug_rng));
            b.images.push_back(&augmented.back());
          } else {
            b.images.push_back(&rec.image);
          }
          b.labels.push_back(out.class_of_id.at(rec.person_id));
          b.attributes.push_back(&train.attributes.at(rec.person_id));
        }
        auto r = train_step(b, model, cfg, opt, learning_rate(cfg.optimizer, s++, total_steps), state, st.kind);
        if (log) *log << step_log_row(epoch, global, r) << "\n";
        if (progress) progress(epoch, global, r);
        out.steps.push_back(r);
        ++global;
      }
    }
  }
  model.mark_trained();
  return out;
}

namespace {

constexpr char kMagic[8] = {'V', '2', 'E', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
uint64_t get_u64(std::istream& is, const std::string& path) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError(path, "truncated checkpoint");
  return v;
}
std::string get_str(std::istream& is, const std::string& path, uint64_t limit) {
  const uint64_t n = get_u64(is, path);
  if (n > limit) throw ParseError(path, "corrupt checkpoint string length");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw ParseError(path, "truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const V2EModel& model, const RunConfig& cfg_in) {
  RunConfig cfg = cfg_in;
  cfg.model = model.config();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFault(fmt::format("cannot write checkpoint '{}'", path));
  os.write(kMagic, sizeof kMagic);
  const std::string meta = to_json(cfg).dump();
  put_u64(os, meta.size());
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put_u64(os, model.trained() ? 1 : 0);
  const auto& names = model.params().names();
  put_u64(os, names.size());
  for (const auto& name : names) {
    const auto t = model.params().get(name);
    put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(os, static_cast<uint64_t>(t.rank()));
    for (auto d : t.shape()) put_u64(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw RuntimeFault(fmt::format("failed writing checkpoint '{}'", path));
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError(fmt::format("cannot open checkpoint '{}'", path));
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw ParseError(path, "not a checkpoint file");
  LoadedCheckpoint out;
  const auto meta = nlohmann::json::parse(get_str(is, path, 1 << 24), nullptr, false);
  if (meta.is_discarded()) throw ParseError(path, "corrupt checkpoint metadata");
  out.config = run_config_from_json(meta);
  const bool trained = get_u64(is, path) != 0;
  out.model = std::make_unique<V2EModel>(out.config.model, out.config.seed);
  std::map<std::string, std::vector<double>> values;
  const uint64_t count = get_u64(is, path);
  for (uint64_t i = 0; i < count; ++i) {
    const std::string name = get_str(is, path, 4096);
    const uint64_t rank = get_u64(is, path);
    if (rank > 8) throw ParseError(path, "corrupt checkpoint rank");
    ag::Shape shape;
    for (uint64_t r = 0; r < rank; ++r) shape.push_back(static_cast<int64_t>(get_u64(is, path)));
    const auto t = out.model->params().get(name);
    if (shape != t.shape())
      throw ParseError(path, fmt::format("parameter '{}' has shape {}, model expects {}", name, ag::shape_str(shape),
                                         ag::shape_str(t.shape())));
    std::vector<double> v(static_cast<size_t>(t.numel()));
    if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double))))
      throw ParseError(path, "truncated checkpoint");
    values[name] = std::move(v);
  }
  if (values.size() != out.model->params().names().size()) throw ParseError(path, "checkpoint is missing parameters");
  out.model->params().copy_values_from(values);
  out.model->mark_trained(trained);
  return out;
}

AttributeSchema schema_for(const RunConfig& cfg) {
  return cfg.schema_path.empty() ? AttributeSchema::builtin(cfg.mode) : AttributeSchema::load(cfg.schema_path);
}

ParsedDataset prepare_dataset(const RunConfig& cfg, bool require_train) {
  if (cfg.dataset_root.empty()) throw ConfigError("dataset_root is not set");
  ParseOptions opts;
  opts.max_query_per_id = cfg.max_query_per_id;
  opts.require_train = require_train;
  auto data = parse_dataset(cfg.dataset_root, schema_for(cfg), opts);
  const int h = cfg.model.backbone.input_height, w = cfg.model.backbone.input_width;
  load_pixels(data.train, h, w);
  for (auto& [_, p] : data.protocols) {
    load_pixels(p.query, h, w);
    load_pixels(p.gallery, h, w);
  }
  return data;
}

std::vector<ProtocolResult> evaluate_protocols(const V2EModel& model, const ParsedDataset& data, int chunk) {
  Embedder embed = [&](const std::vector<const Image*>& images) { return model.embed(images, chunk); };
  std::vector<ProtocolResult> out;
  for (const auto& dir : kProtocolDirections) {
    auto it = data.protocols.find(dir);
    if (it == data.protocols.end()) continue;
    out.push_back(run_protocol(embed, it->second, it->second.spec));
  }
  return out;
}

std::string ablation_tag(const RunConfig& cfg) {
  std::string tag = cfg.model.backbone.kind == BackboneKind::TransformerPatch ? "ViT" : "ToyConv";
  if (cfg.model.eva.enabled) tag += "+EVA";
  if (cfg.model.adh.enabled) tag += "+EP";
  return tag;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const ParsedDataset& data,
                                      const std::function<void(const std::string&)>& notify) {
  std::vector<AblationRow> rows;
  // Table order: baseline, +EP, +EVA, +EVA+EP.
  const std::pair<bool, bool> toggles[] = {{false, false}, {false, true}, {true, false}, {true, true}};
  for (auto [eva, ep] : toggles) {
    RunConfig cfg = base;
    cfg.model.eva.enabled = eva;
    cfg.model.adh.enabled = ep;
    AblationRow row;
    row.tag = ablation_tag(cfg);
    row.eva = eva;
    row.ep = ep;
    if (notify) notify("training " + row.tag);
    auto outcome = train_model(cfg, data.train);
    row.results = evaluate_protocols(*outcome.model, data, cfg.eval_chunk);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace v2e
