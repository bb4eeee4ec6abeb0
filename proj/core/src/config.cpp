#include "v2e/config.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "v2e/errors.hpp"

namespace v2e {

using nlohmann::json;

std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

namespace {

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError(fmt::format("unknown optimizer '{}' (expected sgd or adam)", s));
}

// Copies every key of `src` into `dst`, requiring it to exist there already.
void merge_known(json& dst, const json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError(fmt::format("config section '{}' must be an object", path));
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError(fmt::format("unknown config key '{}'", key));
    json& slot = dst[it.key()];
    if (slot.is_object())
      merge_known(slot, it.value(), key);
    else
      slot = it.value();
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config key '{}': {}", key, e.what()));
  }
}

}  // namespace

void to_json(json& j, const ModelConfig& c) {
  const auto& b = c.backbone;
  j = json{{"backbone",
            {{"kind", std::string(backbone_kind_name(b.kind))},
             {"input_height", b.input_height},
             {"input_width", b.input_width},
             {"patch_size", b.patch_size},
             {"embed_channels", b.embed_channels},
             {"grid_height", b.grid_height},
             {"grid_width", b.grid_width},
             {"depth", b.depth},
             {"heads", b.heads},
             {"mlp_ratio", b.mlp_ratio},
             {"toy_extra_convs", b.toy_extra_convs}}},
           {"eva",
            {{"enabled", c.eva.enabled},
             {"reduction", c.eva.reduction},
             {"region_height", c.eva.region_height},
             {"region_width", c.eva.region_width},
             {"localization_hidden", c.eva.localization_hidden},
             {"per_sample_fusion", c.eva.per_sample_fusion},
             {"initial_stream1_weight", c.eva.initial_stream1_weight}}},
           {"ep",
            {{"enabled", c.adh.enabled},
             {"attributes", c.adh.attributes},
             {"k", c.adh.k},
             {"t", c.adh.t},
             {"share_backbone", c.adh.share_backbone}}},
           {"num_classes", c.num_classes},
           {"gem_p", c.gem_p},
           {"logit_scale", c.logit_scale}};
}

void from_json(const json& j, ModelConfig& c) {
  const auto& b = j.at("backbone");
  std::string kind;
  read(b, "kind", kind);
  c.backbone.kind = parse_backbone_kind(kind);
  read(b, "input_height", c.backbone.input_height);
  read(b, "input_width", c.backbone.input_width);
  read(b, "patch_size", c.backbone.patch_size);
  read(b, "embed_channels", c.backbone.embed_channels);
  read(b, "grid_height", c.backbone.grid_height);
  read(b, "grid_width", c.backbone.grid_width);
  read(b, "depth", c.backbone.depth);
  read(b, "heads", c.backbone.heads);
  read(b, "mlp_ratio", c.backbone.mlp_ratio);
  read(b, "toy_extra_convs", c.backbone.toy_extra_convs);
  const auto& e = j.at("eva");
  read(e, "enabled", c.eva.enabled);
  read(e, "reduction", c.eva.reduction);
  read(e, "region_height", c.eva.region_height);
  read(e, "region_width", c.eva.region_width);
  read(e, "localization_hidden", c.eva.localization_hidden);
  read(e, "per_sample_fusion", c.eva.per_sample_fusion);
  read(e, "initial_stream1_weight", c.eva.initial_stream1_weight);
  const auto& a = j.at("ep");
  read(a, "enabled", c.adh.enabled);
  read(a, "attributes", c.adh.attributes);
  read(a, "k", c.adh.k);
  read(a, "t", c.adh.t);
  read(a, "share_backbone", c.adh.share_backbone);
  read(j, "num_classes", c.num_classes);
  read(j, "gem_p", c.gem_p);
  read(j, "logit_scale", c.logit_scale);
}

json to_json(const RunConfig& c) {
  json model;
  to_json(model, c.model);
  const auto& l = c.loss;
  const auto& o = c.optimizer;
  return json{{"mode", std::string(mode_name(c.mode))},
              {"dataset_root", c.dataset_root},
              {"schema_path", c.schema_path},
              {"model", model},
              {"loss",
               {{"alpha", l.alpha},
                {"beta", l.beta},
                {"margin", l.margin},
                {"v", l.v},
                {"label_smoothing", l.label_smoothing},
                {"weight_p1", l.p1},
                {"weight_p2", l.p2},
                {"weight_triplet", l.triplet},
                {"weight_ce", l.ce}}},
              {"sampler", {{"p", c.sampler.p}, {"k", c.sampler.k}}},
              {"optimizer",
               {{"kind", std::string(optimizer_name(o.kind))},
                {"lr", o.lr},
                {"momentum", o.momentum},
                {"weight_decay", o.weight_decay},
                {"warmup_fraction", o.warmup_fraction},
                {"beta1", o.beta1},
                {"beta2", o.beta2},
                {"adam_eps", o.adam_eps}}},
              {"augment",
               {{"enabled", c.augment.enabled},
                {"flip", c.augment.flip},
                {"max_shift", c.augment.max_shift},
                {"max_zoom", c.augment.max_zoom},
                {"brightness", c.augment.brightness},
                {"contrast", c.augment.contrast},
                {"downscale", c.augment.downscale},
                {"min_downscale", c.augment.min_downscale},
                {"erase", c.augment.erase}}},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"amp", c.amp},
              {"initial_loss_scale", c.initial_loss_scale},
              {"freeze_target", c.freeze_target},
              {"target_fraction", c.target_fraction},
              {"max_query_per_id", c.max_query_per_id},
              {"eval_chunk", c.eval_chunk}};
}

RunConfig run_config_from_json(const json& j, const RunConfig& base) {
  json doc = to_json(base);
  merge_known(doc, j, "");
  RunConfig c;
  std::string s;
  read(doc, "mode", s);
  c.mode = parse_mode(s);
  read(doc, "dataset_root", c.dataset_root);
  read(doc, "schema_path", c.schema_path);
  c.model = doc.at("model").get<ModelConfig>();
  const auto& l = doc.at("loss");
  read(l, "alpha", c.loss.alpha);
  read(l, "beta", c.loss.beta);
  read(l, "margin", c.loss.margin);
  read(l, "v", c.loss.v);
  read(l, "label_smoothing", c.loss.label_smoothing);
  read(l, "weight_p1", c.loss.p1);
  read(l, "weight_p2", c.loss.p2);
  read(l, "weight_triplet", c.loss.triplet);
  read(l, "weight_ce", c.loss.ce);
  read(doc.at("sampler"), "p", c.sampler.p);
  read(doc.at("sampler"), "k", c.sampler.k);
  const auto& o = doc.at("optimizer");
  read(o, "kind", s);
  c.optimizer.kind = parse_optimizer(s);
  read(o, "lr", c.optimizer.lr);
  read(o, "momentum", c.optimizer.momentum);
  read(o, "weight_decay", c.optimizer.weight_decay);
  read(o, "warmup_fraction", c.optimizer.warmup_fraction);
  read(o, "beta1", c.optimizer.beta1);
  read(o, "beta2", c.optimizer.beta2);
  read(o, "adam_eps", c.optimizer.adam_eps);
  const auto& a = doc.at("augment");
  read(a, "enabled", c.augment.enabled);
  read(a, "flip", c.augment.flip);
  read(a, "max_shift", c.augment.max_shift);
  read(a, "max_zoom", c.augment.max_zoom);
  read(a, "brightness", c.augment.brightness);
  read(a, "contrast", c.augment.contrast);
  read(a, "downscale", c.augment.downscale);
  read(a, "min_downscale", c.augment.min_downscale);
  read(a, "erase", c.augment.erase);
  read(doc, "epochs", c.epochs);
  read(doc, "seed", c.seed);
  read(doc, "amp", c.amp);
  read(doc, "initial_loss_scale", c.initial_loss_scale);
  read(doc, "freeze_target", c.freeze_target);
  read(doc, "target_fraction", c.target_fraction);
  read(doc, "max_query_per_id", c.max_query_per_id);
  read(doc, "eval_chunk", c.eval_chunk);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path, e.what());
  }
  return run_config_from_json(j, base);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError(fmt::format("override '{}' is not of the form key=value", assignment));
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json* node = &doc;
  std::stringstream parts(key);
  std::string part;
  while (std::getline(parts, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw ConfigError(fmt::format("unknown config key '{}'", key));
    node = &(*node)[part];
  }
  if (node->is_object()) throw ConfigError(fmt::format("config key '{}' names a section, not a value", key));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  *node = value;
}

void RunConfig::validate() const {
  model.backbone.validate();
  loss.validate();
  if (model.adh.attributes != attribute_count(mode))
    throw ConfigError(fmt::format("model.ep.attributes is {} but mode {} has {} attributes", model.adh.attributes,
                                  mode_name(mode), attribute_count(mode)));
  if (sampler.p < 2 || sampler.k < 1) throw ConfigError("sampler needs p >= 2 and k >= 1");
  if (optimizer.lr <= 0) throw ConfigError("learning rate must be positive");
  if (optimizer.warmup_fraction < 0 || optimizer.warmup_fraction >= 1)
    throw ConfigError("warmup_fraction must lie in [0,1)");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (initial_loss_scale <= 0) throw ConfigError("initial_loss_scale must be positive");
  if (target_fraction <= 0 || target_fraction >= 1) throw ConfigError("target_fraction must lie in (0,1)");
  if (max_query_per_id < 1) throw ConfigError("max_query_per_id must be at least 1");
  if (eval_chunk < 1) throw ConfigError("eval_chunk must be at least 1");
}

RunConfig toy_run_config() {
  RunConfig c;
  auto& b = c.model.backbone;
  b.kind = BackboneKind::ToyConv;
  b.input_height = 64;
  b.input_width = 32;
  b.patch_size = 8;
  b.embed_channels = 64;
  b.toy_extra_convs = 1;
  c.model.eva.region_height = 6;
  c.model.eva.region_width = 4;
  c.model.eva.localization_hidden = 16;
  // The small 6x4 head crop carries little identity signal at this scale.
  c.model.eva.initial_stream1_weight = 0.9;
  c.optimizer.kind = OptimizerKind::Adam;
  c.optimizer.lr = 3e-3;
  c.optimizer.weight_decay = 5e-4;
  c.augment.enabled = true;
  c.epochs = 100;
  return c;
}

}  // namespace v2e
