#include <benchmark/benchmark.h>

#include "v2e/metrics.hpp"
#include "v2e/ops.hpp"
#include "v2e/train.hpp"

using namespace v2e;

namespace {

ag::Tensor uniform(Rng& rng, ag::Shape shape, double lo, double hi, bool grad = false) {
  std::vector<double> v(static_cast<size_t>(ag::numel_of(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return ag::Tensor::from(shape, std::move(v), grad);
}

Image noise_image(Rng& rng, int h, int w) {
  Image im;
  im.height = h;
  im.width = w;
  im.pixels.resize(static_cast<size_t>(h * w * 3));
  for (auto& p : im.pixels) p = static_cast<float>(rng.uniform());
  return im;
}

RunConfig bench_config() {
  RunConfig c = toy_run_config();
  c.augment.enabled = false;
  return c;
}

void BM_AttentionGem(benchmark::State& state) {
  const int64_t c = state.range(0);
  Rng rng(1);
  auto map = uniform(rng, {16, c, 128}, 0, 1, true);
  auto att = uniform(rng, {16, 88, 128}, 0, 1, true);
  auto p = ag::Tensor::scalar(3.0, true);
  for (auto _ : state) {
    auto y = ag::sum(ag::attention_gem(map, att, p, 1e-6));
    y.backward();
    benchmark::DoNotOptimize(y.item());
  }
  state.SetItemsProcessed(state.iterations() * 16 * 88 * c * 128);
}
BENCHMARK(BM_AttentionGem)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Embed(benchmark::State& state) {
  const auto cfg = bench_config();
  cfg.validate();
  V2EModel model(cfg.model, 1);
  Rng rng(2);
  std::vector<Image> imgs;
  for (int i = 0; i < state.range(0); ++i)
    imgs.push_back(noise_image(rng, cfg.model.backbone.input_height, cfg.model.backbone.input_width));
  std::vector<const Image*> ptrs;
  for (const auto& im : imgs) ptrs.push_back(&im);
  for (auto _ : state) benchmark::DoNotOptimize(model.embed(ptrs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Embed)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  auto cfg = bench_config();
  cfg.model.adh.enabled = state.range(0) != 0;
  cfg.model.num_classes = cfg.sampler.p;
  V2EModel model(cfg.model, 1);
  const auto& schema = AttributeSchema::builtin(cfg.mode);
  Rng rng(3);
  std::vector<Image> imgs;
  std::vector<AttributeVector> attrs;
  TrainBatch batch;
  const int ids = cfg.sampler.p, per = cfg.sampler.k;
  for (int id = 0; id < ids; ++id) {
    std::vector<int> cats;
    for (const auto& label : schema.labels()) cats.push_back(rng.below(label.size()));
    attrs.push_back(AttributeVector::from_categories(schema, cats));
  }
  for (int id = 0; id < ids; ++id)
    for (int k = 0; k < per; ++k) {
      imgs.push_back(noise_image(rng, cfg.model.backbone.input_height, cfg.model.backbone.input_width));
      batch.labels.push_back(id);
    }
  for (size_t i = 0; i < imgs.size(); ++i) {
    batch.images.push_back(&imgs[i]);
    batch.attributes.push_back(&attrs[static_cast<size_t>(batch.labels[i])]);
  }
  Optimizer opt(cfg.optimizer, model.params().tensors_in(model.active_groups()));
  StepState st;
  for (auto _ : state) benchmark::DoNotOptimize(train_step(batch, model, cfg, opt, 1e-6, st).total);
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(imgs.size()));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->ArgName("adh")->Unit(benchmark::kMillisecond);

void BM_EvaluateMatrix(benchmark::State& state) {
  Rng rng(4);
  DistanceMatrix m;
  m.rows = state.range(0);
  m.cols = state.range(1);
  for (int64_t i = 0; i < m.rows * m.cols; ++i) m.values.push_back(rng.uniform());
  for (int64_t q = 0; q < m.rows; ++q) m.query_ids.push_back(rng.below(100));
  for (int64_t g = 0; g < m.cols; ++g) m.gallery_ids.push_back(rng.below(100));
  m.query_platforms.assign(static_cast<size_t>(m.rows), CameraPlatform::Aerial);
  m.gallery_platforms.assign(static_cast<size_t>(m.cols), CameraPlatform::CCTV);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_matrix(m));
}
BENCHMARK(BM_EvaluateMatrix)->Args({200, 1000})->Args({1000, 5000})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
