#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "support/check.hpp"
#include "v2e/errors.hpp"
#include "v2e/model.hpp"
#include "v2e/report.hpp"

using namespace v2e;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  auto& b = c.backbone;
  b.kind = BackboneKind::ToyConv;
  b.input_height = 32;
  b.input_width = 16;
  b.patch_size = 8;
  b.embed_channels = 16;
  c.eva.reduction = 4;
  c.eva.localization_hidden = 8;
  c.num_classes = 4;
  return c;
}

}  // namespace

TEST(Model, EmbeddingsAreUnitAndBatchIndependent) {
  Rng rng(1);
  std::vector<Image> imgs;
  for (int i = 0; i < 5; ++i) imgs.push_back(check::random_image(rng, 32, 16));
  for (bool eva : {false, true}) {
    auto cfg = tiny_model();
    cfg.eva.enabled = eva;
    V2EModel model(cfg, 3);
    EXPECT_EQ(model.embedding_dim(), eva ? 64 : 16);
    std::vector<const Image*> ptrs;
    for (const auto& im : imgs) ptrs.push_back(&im);
    const auto all = model.embed(ptrs, 2);
    ASSERT_EQ(all.size(), 5u);
    for (size_t i = 0; i < all.size(); ++i) {
      double n = 0;
      for (double v : all[i].data) n += v * v;
      EXPECT_NEAR(n, 1.0, 1e-12);
      const auto single = model.embed({ptrs[i]});
      for (size_t c = 0; c < single[0].size(); ++c) EXPECT_NEAR(single[0].data[c], all[i].data[c], 1e-12);
    }
  }
}

TEST(Model, SameSeedSameParameters) {
  V2EModel a(tiny_model(), 4), b(tiny_model(), 4), c(tiny_model(), 5);
  const auto& names = a.params().names();
  EXPECT_EQ(a.params().hash(names), b.params().hash(names));
  EXPECT_NE(a.params().hash(names), c.params().hash(names));
  for (const auto& n : names) EXPECT_TRUE(c.params().has(n));
}

TEST(Model, StreamToggleChangesGroups) {
  auto cfg = tiny_model();
  V2EModel full(cfg, 1);
  EXPECT_EQ(full.active_groups().size(), 5u);
  cfg.eva.enabled = false;
  cfg.adh.enabled = false;
  V2EModel base(cfg, 1);
  EXPECT_EQ(base.active_groups(), (std::vector<std::string>{group::kBackbone, group::kStream1, group::kClassifier}));
}

TEST(Model, SeparateAttributeBackbone) {
  auto cfg = tiny_model();
  V2EModel shared(cfg, 1);
  cfg.adh.share_backbone = false;
  V2EModel split(cfg, 1);
  EXPECT_GT(split.params().scalar_count(), shared.params().scalar_count());
  Rng rng(2);
  Image a = check::random_image(rng, 32, 16);
  EXPECT_EQ(decompose_batch(split, {&a, &a}).size(), 1u);
}

TEST(Explain, IdenticalPairHasNoContribution) {
  V2EModel model(tiny_model(), 6);
  const auto& schema = AttributeSchema::builtin(DatasetMode::AgReidV2);
  Rng rng(3);
  Image a = check::random_image(rng, 32, 16);
  auto e = explain_pair(model, schema, a, a);
  ASSERT_EQ(e.ranked.size(), 88u);
  for (const auto& r : e.ranked) EXPECT_NEAR(r.distance, 0.0, 1e-12);
  EXPECT_NEAR(e.decomposition.reconstructed, 0.0, 1e-10);
  EXPECT_FALSE(e.warnings.empty());
}

TEST(Explain, RankedContributionsCoverEveryAttribute) {
  V2EModel model(tiny_model(), 7);
  model.mark_trained();
  const auto& schema = AttributeSchema::builtin(DatasetMode::AgReidV2);
  Rng rng(4);
  Image a = check::random_image(rng, 32, 16), b = check::random_image(rng, 32, 16);
  auto e = explain_pair(model, schema, a, b);
  EXPECT_TRUE(e.warnings.empty());
  ASSERT_EQ(e.ranked.size(), 88u);
  std::vector<bool> seen(88, false);
  double sum = 0, share = 0;
  for (size_t i = 0; i < e.ranked.size(); ++i) {
    const auto& r = e.ranked[i];
    seen[static_cast<size_t>(r.bit)] = true;
    EXPECT_EQ(r.name, schema.bit_name(r.bit));
    EXPECT_GE(r.distance, 0.0);
    if (i > 0) {
      EXPECT_GE(e.ranked[i - 1].distance, r.distance);
    }
    EXPECT_EQ(r.distance, e.decomposition.per_attribute[static_cast<size_t>(r.bit)]);
    sum += r.distance;
    share += r.share;
  }
  for (bool s : seen) EXPECT_TRUE(s);
  EXPECT_NEAR(sum, e.decomposition.reconstructed, 1e-12);
  EXPECT_NEAR(share, 1.0, 1e-12);
  EXPECT_GT(e.decomposition.total, 0.0);
  ASSERT_EQ(e.saliency_i.size(), 88u);
  EXPECT_EQ(e.saliency_i[0].size(), 32u * 16u);
  EXPECT_EQ(e.height, 32);

  check::TempDir dir("explain");
  write_explanation(e, a, b, dir / "x", 4);
  for (const char* f : {"explanation.json", "explanation.txt", "saliency.png"})
    EXPECT_TRUE(std::filesystem::exists(dir / (std::string("x/") + f))) << f;
  std::ifstream in(dir / "x/explanation.json");
  auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["attributes"].size(), 88u);
  EXPECT_EQ(j["attributes"][0]["name"], e.ranked[0].name);
}

TEST(Explain, BatchDecompositionMatchesPairwise) {
  V2EModel model(tiny_model(), 8);
  const auto& schema = AttributeSchema::builtin(DatasetMode::AgReidV2);
  Rng rng(5);
  std::vector<Image> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(check::random_image(rng, 32, 16));
  std::vector<std::pair<int, int>> pairs;
  auto batch = decompose_batch(model, {&imgs[0], &imgs[1], &imgs[2], &imgs[3]}, &pairs);
  ASSERT_EQ(batch.size(), 6u);
  ASSERT_EQ(pairs.size(), 6u);
  for (size_t p = 0; p < pairs.size(); ++p) {
    auto [i, j] = pairs[p];
    EXPECT_LT(i, j);
    auto e = explain_pair(model, schema, imgs[static_cast<size_t>(i)], imgs[static_cast<size_t>(j)]);
    EXPECT_NEAR(batch[p].total, e.decomposition.total, 1e-9);
    for (size_t k = 0; k < 88; ++k) EXPECT_NEAR(batch[p].per_attribute[k], e.decomposition.per_attribute[k], 1e-9);
    double sum = 0;
    for (double v : batch[p].per_attribute) sum += v;
    EXPECT_EQ(batch[p].reconstructed, sum);
  }
}

TEST(Explain, RequiresAttributeHeadAndMatchingSchema) {
  auto cfg = tiny_model();
  Rng rng(6);
  Image a = check::random_image(rng, 32, 16);
  V2EModel model(cfg, 1);
  EXPECT_THROW(explain_pair(model, AttributeSchema::builtin(DatasetMode::UavHuman), a, a), ConfigError);
  cfg.adh.enabled = false;
  V2EModel none(cfg, 1);
  EXPECT_THROW(explain_pair(none, AttributeSchema::builtin(DatasetMode::AgReidV2), a, a), ConfigError);
  EXPECT_THROW(decompose_batch(none, {&a, &a}), ConfigError);
  ProtocolSplit split;
  EXPECT_TRUE(rank1_attribute_impact(none, AttributeSchema::builtin(DatasetMode::AgReidV2), split).empty());
}

TEST(Explain, RankOneImpactSharesSumToOne) {
  V2EModel model(tiny_model(), 9);
  const auto& schema = AttributeSchema::builtin(DatasetMode::AgReidV2);
  Rng rng(7);
  ProtocolSplit split;
  for (int i = 0; i < 3; ++i) {
    split.query.records.push_back({i, CameraPlatform::Aerial, 0, check::random_image(rng, 32, 16), ""});
    split.gallery.records.push_back({i, CameraPlatform::CCTV, 0, check::random_image(rng, 32, 16), ""});
  }
  auto impacts = rank1_attribute_impact(model, schema, split, 2);
  ASSERT_EQ(impacts.size(), 88u);
  double sum = 0;
  for (const auto& a : impacts) sum += a.share;
  EXPECT_NEAR(sum, 1.0, 1e-9);
  EXPECT_EQ(impacts[0].attribute, schema.bit_name(0));
}
