#include <cmath>
#include <fstream>
#include <map>
#include <limits>
#include <set>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "support/check.hpp"
#include "v2e/errors.hpp"
#include "v2e/train.hpp"

using namespace v2e;

namespace {

constexpr int kH = 32, kW = 16;

RunConfig tiny_config() {
  RunConfig c;
  auto& b = c.model.backbone;
  b.kind = BackboneKind::ToyConv;
  b.input_height = kH;
  b.input_width = kW;
  b.patch_size = 8;
  b.embed_channels = 16;
  c.model.eva.reduction = 4;
  c.model.eva.localization_hidden = 8;
  c.sampler = {3, 2};
  c.optimizer.kind = OptimizerKind::Sgd;
  c.optimizer.lr = 1e-3;
  c.augment.enabled = false;
  c.epochs = 1;
  return c;
}

AttributeVector random_attributes(Rng& rng) {
  const auto& schema = AttributeSchema::builtin(DatasetMode::AgReidV2);
  std::vector<int> cats;
  for (const auto& label : schema.labels()) cats.push_back(rng.below(label.size()));
  return AttributeVector::from_categories(schema, cats);
}

DatasetSplit random_split(uint64_t seed, int ids, int per_id, CameraPlatform platform = CameraPlatform::CCTV) {
  Rng rng(seed);
  DatasetSplit s;
  for (int id = 0; id < ids; ++id) {
    s.attributes[id] = random_attributes(rng);
    for (int q = 0; q < per_id; ++q) s.records.push_back({id, platform, q, check::random_image(rng, kH, kW), ""});
  }
  return s;
}

TrainBatch batch_of(const DatasetSplit& s) {
  TrainBatch b;
  for (const auto& r : s.records) {
    b.images.push_back(&r.image);
    b.labels.push_back(r.person_id);
    b.attributes.push_back(&s.attributes.at(r.person_id));
  }
  return b;
}

// Loss of the batch at the current parameters, leaving them untouched.
double measure(const TrainBatch& b, V2EModel& model, const RunConfig& cfg) {
  Optimizer none(cfg.optimizer, {});
  StepState st;
  return train_step(b, model, cfg, none, 0.0, st).total;
}

}  // namespace

TEST(Sampler, BalancedBatches) {
  auto split = random_split(1, 7, 5);
  split.records.push_back({7, CameraPlatform::CCTV, 0, Image{}, ""});  // single-image identity
  IdentitySampler a(split, 6, 4, 9), b(split, 6, 4, 9);
  EXPECT_EQ(a.batches_per_epoch(), 2);
  const auto ea = a.epoch();
  EXPECT_EQ(ea, b.epoch());
  std::set<int> seen;
  for (const auto& batch : ea) {
    ASSERT_EQ(batch.size(), 24u);
    std::map<int, int> per_id;
    for (size_t i : batch) ++per_id[split.records[i].person_id];
    EXPECT_EQ(per_id.size(), 6u);
    for (auto [id, n] : per_id) {
      EXPECT_EQ(n, 4);
      seen.insert(id);
    }
  }
  EXPECT_EQ(seen.size(), 8u);
  EXPECT_THROW(IdentitySampler(random_split(2, 5, 2), 6, 4, 1), ConfigError);
}

TEST(Schedule, WarmupThenCosine) {
  OptimizerConfig c;
  c.lr = 0.1;
  c.warmup_fraction = 0.1;
  EXPECT_NEAR(learning_rate(c, 0, 100), 0.01, 1e-15);
  EXPECT_NEAR(learning_rate(c, 9, 100), 0.1, 1e-15);
  EXPECT_NEAR(learning_rate(c, 10, 100), 0.1, 1e-15);
  EXPECT_NEAR(learning_rate(c, 55, 100), 0.05, 1e-12);
  EXPECT_NEAR(learning_rate(c, 100, 100), 0.0, 1e-15);
  for (int s = 10; s < 100; ++s) EXPECT_LE(learning_rate(c, s + 1, 100), learning_rate(c, s, 100));
}

TEST(TrainStep, DisabledStreamsAreInert) {
  auto cfg = tiny_config();
  cfg.model.eva.enabled = false;
  cfg.model.adh.enabled = false;
  auto split = random_split(3, 3, 2);
  cfg.model.num_classes = 3;
  V2EModel model(cfg.model, 5);
  const auto eva_hash = model.params().hash_groups({group::kEva});
  const auto ep_hash = model.params().hash_groups({group::kEp});
  const auto bb_hash = model.params().hash_groups({group::kBackbone});
  Optimizer opt(cfg.optimizer, model.params().tensors_in(model.active_groups()));
  StepState st;
  auto r = train_step(batch_of(split), model, cfg, opt, 1e-2, st);
  EXPECT_EQ(r.components.distill, 0.0);
  EXPECT_EQ(r.components.p1, 0.0);
  EXPECT_EQ(r.components.p2, 0.0);
  EXPECT_EQ(r.pairs, 0);
  EXPECT_GT(r.components.ce, 0.0);
  EXPECT_EQ(model.params().hash_groups({group::kEva}), eva_hash);
  EXPECT_EQ(model.params().hash_groups({group::kEp}), ep_hash);
  EXPECT_NE(model.params().hash_groups({group::kBackbone}), bb_hash);
}

TEST(TrainStep, AttributeStageLeavesTargetUntouched) {
  auto cfg = tiny_config();
  auto split = random_split(4, 3, 2);
  cfg.model.num_classes = 3;
  V2EModel model(cfg.model, 6);
  const auto target = model.params().hash_groups(model.target_groups());
  const auto ep = model.params().hash_groups({group::kEp});
  Optimizer opt(cfg.optimizer, model.params().tensors_in({group::kEp}));
  StepState st;
  auto r = train_step(batch_of(split), model, cfg, opt, 1e-2, st, TrainStage::AttributeOnly);
  EXPECT_EQ(r.components.triplet, 0.0);
  EXPECT_EQ(r.components.ce, 0.0);
  EXPECT_EQ(r.pairs, 15);
  EXPECT_EQ(model.params().hash_groups(model.target_groups()), target);
  EXPECT_NE(model.params().hash_groups({group::kEp}), ep);
}

TEST(TrainStep, FullBatchEnumeratesAllPairs) {
  auto cfg = tiny_config();
  auto split = random_split(5, 6, 4);
  cfg.model.num_classes = 6;
  V2EModel model(cfg.model, 7);
  Optimizer opt(cfg.optimizer, model.params().tensors_in(model.active_groups()));
  StepState st;
  EXPECT_EQ(train_step(batch_of(split), model, cfg, opt, 1e-3, st).pairs, 276);
}

TEST(TrainStep, SmallStepDescendsAtFirstOrderRate) {
  auto cfg = tiny_config();
  cfg.optimizer.weight_decay = 0;
  auto split = random_split(6, 3, 2);
  cfg.model.num_classes = 3;
  const double lr = 1e-9;
  for (uint64_t seed : {1, 2, 3}) {
    V2EModel model(cfg.model, seed);
    const auto b = batch_of(split);
    const double before = measure(b, model, cfg);
    double grad_sq = 0;
    for (const auto& t : model.params().tensors_in(model.active_groups()))
      for (double g : t.node()->grad) grad_sq += g * g;
    Optimizer opt(cfg.optimizer, model.params().tensors_in(model.active_groups()));
    StepState st;
    train_step(b, model, cfg, opt, lr, st);
    const double drop = before - measure(b, model, cfg);
    EXPECT_GT(drop, 0) << seed;
    EXPECT_NEAR(drop / (lr * grad_sq), 1.0, 1e-2) << seed;
  }
}

TEST(TrainStep, LoggedTotalIsWeightedSum) {
  auto cfg = tiny_config();
  cfg.loss.p1 = 2.0;
  auto split = random_split(7, 3, 2);
  cfg.model.num_classes = 3;
  V2EModel model(cfg.model, 8);
  Optimizer opt(cfg.optimizer, model.params().tensors_in(model.active_groups()));
  StepState st;
  auto r = train_step(batch_of(split), model, cfg, opt, 1e-3, st);
  const auto& c = r.components;
  const double want = c.distill + 2.0 * c.p1 + 50.0 * c.p2 + 10.0 * c.triplet + 50.0 * c.ce;
  EXPECT_NEAR(r.total, want, 1e-6 * std::abs(want));
  auto row = nlohmann::json::parse(step_log_row(0, 3, r));
  EXPECT_EQ(row["step"], 3);
  EXPECT_EQ(row["pairs"], 15);
  EXPECT_DOUBLE_EQ(row["total"].get<double>(), r.total);
  EXPECT_DOUBLE_EQ(row["L_p2"].get<double>(), c.p2);
  EXPECT_FALSE(row["skipped"].get<bool>());
}

TEST(TrainStep, AmpOverflowSkipsAndHalvesScale) {
  auto cfg = tiny_config();
  cfg.amp = true;
  auto split = random_split(8, 3, 2);
  cfg.model.num_classes = 3;
  V2EModel model(cfg.model, 9);
  const auto before = model.params().hash_groups(model.active_groups());
  Optimizer opt(cfg.optimizer, model.params().tensors_in(model.active_groups()));
  StepState st{1e300, 0};
  auto r = train_step(batch_of(split), model, cfg, opt, 1e-3, st);
  EXPECT_TRUE(r.skipped);
  EXPECT_TRUE(std::isnan(r.total));
  EXPECT_EQ(st.loss_scale, 5e299);
  EXPECT_EQ(model.params().hash_groups(model.active_groups()), before);
  EXPECT_TRUE(nlohmann::json::parse(step_log_row(0, 0, r))["total"].is_null());

  st.loss_scale = 1;
  auto ok = train_step(batch_of(split), model, cfg, opt, 1e-3, st);
  EXPECT_FALSE(ok.skipped);
  EXPECT_EQ(st.loss_scale, 1);
  EXPECT_NE(model.params().hash_groups(model.active_groups()), before);
}

TEST(TrainStep, NonFiniteInputRaisesInFullPrecision) {
  auto cfg = tiny_config();
  auto split = random_split(9, 3, 2);
  split.records[0].image.pixels[5] = std::numeric_limits<float>::quiet_NaN();
  cfg.model.num_classes = 3;
  V2EModel model(cfg.model, 10);
  Optimizer opt(cfg.optimizer, model.params().tensors_in(model.active_groups()));
  StepState st;
  EXPECT_THROW(train_step(batch_of(split), model, cfg, opt, 1e-3, st), RuntimeFault);
  TrainBatch tiny;
  EXPECT_THROW(train_step(tiny, model, cfg, opt, 1e-3, st), ConfigError);
}

TEST(TrainModel, CheckpointRoundTripIsExact) {
  auto cfg = tiny_config();
  ParsedDataset data;
  data.train = random_split(10, 4, 2);
  ProtocolSplit p;
  p.spec = ProtocolSpec{CameraPlatform::Aerial, CameraPlatform::CCTV, 6};
  p.query = random_split(11, 3, 1, CameraPlatform::Aerial);
  p.query.name = SplitName::Query;
  p.gallery = random_split(12, 3, 2, CameraPlatform::CCTV);
  p.gallery.name = SplitName::Gallery;
  data.protocols[p.spec.direction()] = p;

  std::ostringstream log;
  auto out = train_model(cfg, data.train, &log);
  EXPECT_EQ(out.model->config().num_classes, 4);
  EXPECT_TRUE(out.model->trained());
  EXPECT_EQ(out.steps.size(), 2u);
  int lines = 0;
  std::istringstream in(log.str());
  for (std::string line; std::getline(in, line);) {
    EXPECT_TRUE(nlohmann::json::parse(line).contains("L_d"));
    ++lines;
  }
  EXPECT_EQ(lines, 2);

  check::TempDir dir("ckpt");
  save_checkpoint(dir / "m.ckpt", *out.model, cfg);
  auto loaded = load_checkpoint(dir / "m.ckpt");
  EXPECT_TRUE(loaded.model->trained());
  EXPECT_EQ(loaded.config.model.num_classes, 4);
  std::vector<const Image*> imgs;
  for (const auto& r : p.gallery.records) imgs.push_back(&r.image);
  EXPECT_EQ(loaded.model->embed(imgs), out.model->embed(imgs));
  EXPECT_EQ(evaluate_protocols(*loaded.model, data), evaluate_protocols(*out.model, data));
  EXPECT_EQ(evaluate_protocols(*out.model, data).size(), 1u);

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), ParseError);
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), ConfigError);
}

TEST(TrainModel, FrozenTargetRunsTwoStages) {
  auto cfg = tiny_config();
  cfg.freeze_target = true;
  cfg.epochs = 2;
  auto split = random_split(13, 3, 2);
  auto out = train_model(cfg, split);
  ASSERT_EQ(out.steps.size(), 2u);
  EXPECT_EQ(out.steps[0].pairs, 0);
  EXPECT_EQ(out.steps[1].pairs, 15);
  EXPECT_GT(out.steps[0].components.ce, 0.0);
  EXPECT_EQ(out.steps[1].components.ce, 0.0);
  EXPECT_GT(out.steps[1].components.p2 + out.steps[1].components.p1 + out.steps[1].components.distill, 0.0);
}

TEST(TrainModel, MissingAnnotationIsRejected) {
  auto split = random_split(14, 3, 2);
  split.attributes.erase(1);
  EXPECT_THROW(train_model(tiny_config(), split), ConfigError);
}

TEST(Ablation, Tags) {
  auto cfg = tiny_config();
  EXPECT_EQ(ablation_tag(cfg), "ToyConv+EVA+EP");
  cfg.model.eva.enabled = false;
  EXPECT_EQ(ablation_tag(cfg), "ToyConv+EP");
  cfg.model.adh.enabled = false;
  EXPECT_EQ(ablation_tag(cfg), "ToyConv");
  cfg.model.backbone.kind = BackboneKind::TransformerPatch;
  cfg.model.eva.enabled = true;
  EXPECT_EQ(ablation_tag(cfg), "ViT+EVA");
}
