// Acceptance runner: one PASS/FAIL line per criterion.
//
// Exits 0 once every criterion has been evaluated, whatever the verdicts;
// --strict makes any FAIL a non-zero exit.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "support/check.hpp"
#include "support/gradient_cases.hpp"
#include "support/metric_oracle.hpp"
#include "v2e/adh.hpp"
#include "v2e/config.hpp"
#include "v2e/dataset.hpp"
#include "v2e/eva.hpp"
#include "v2e/fixture.hpp"
#include "v2e/losses.hpp"
#include "v2e/metrics.hpp"
#include "v2e/model.hpp"
#include "v2e/train.hpp"

using namespace v2e;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

const AttributeSchema& schema88() { return AttributeSchema::builtin(DatasetMode::AgReidV2); }

// --- 1 ----------------------------------------------------------------------

Verdict gradients() {
  Stopwatch clock;
  std::vector<std::string> parts;
  bool ok = true;
  int checks = 0;
  for (const auto& c : check::gradient_cases()) {
    double worst = 0;
    for (uint64_t seed = 0; seed < 100; ++seed, ++checks) worst = std::max(worst, c.run(seed));
    ok &= worst < c.tolerance;
    parts.push_back(fmt::format("{} {:.1e}", c.name, worst));
  }
  const double t = clock.seconds();
  ok &= t < 120;
  return {ok, fmt::format("{} checks in {:.1f}s; worst rel error: {}", checks, t, fmt::join(parts, ", "))};
}

// --- 2 ----------------------------------------------------------------------

Verdict loss_oracles() {
  const double x = std::pow(2.0 / 4.0, 0.5);
  const double direct = 0.5 * std::log((4 - 2 * x) / (2 * (1 - x)));
  const double lam = prior_lambda(4, 2, 0.5);
  PairAttributeContext ctx{{1, 1, 0, 0}, 2, 4};
  const double p1 = prior_loss_p1(DistanceDecomposition::make(1.0, {0.25, 0.25, 0.25, 0.25}), ctx, 0.5);
  const double total = total_loss(LossComponents{1, 0.1, 0.01, 0.2, 2}, LossWeights{});
  const bool ok = std::abs(lam - direct) < 1e-6 && std::abs(p1 - 0.41421) < 1e-5 &&
                  std::abs(p1 - (std::sqrt(2.0) - 1)) < 1e-6 && total == 104.5;
  return {ok, fmt::format("lambda {:.6f} (direct {:.6f}); L_p1 at shares 0.5/0.5 = {:.6f}; total {}", lam, direct, p1,
                          total)};
}

// --- 3 ----------------------------------------------------------------------

Verdict delta_checks() {
  const double k = 1.0 / 88, t = 0.5;
  const double jump = std::abs(delta_activation(-1e-300, k, t) - delta_activation(1e-300, k, t));
  bool monotone = true;
  double prev = delta_activation(-10.0, k, t);
  for (int i = 1; i < 1000; ++i) {
    const double y = delta_activation(-10.0 + 20.0 * i / 999.0, k, t);
    monotone &= y >= prev;
    prev = y;
  }
  const double at3 = delta_activation(3.0, k, t);
  const bool ok = jump < 1e-12 && monotone && std::abs(at3 - 2.0 / 88) < 1e-12;
  return {ok, fmt::format("jump at 0 {:.1e}; monotone on 1000 points: {}; delta(3) - 2/88 = {:.1e}", jump,
                          monotone ? "yes" : "no", at3 - 2.0 / 88)};
}

// --- 4 ----------------------------------------------------------------------

Verdict xor_truth_table() {
  static const int kTruth[2][2] = {{0, 1}, {1, 0}};
  int matched = 0;
  for (unsigned a = 0; a < 16; ++a)
    for (unsigned b = 0; b < 16; ++b) {
      AttributeVector va, vb;
      for (int k = 0; k < 4; ++k) {
        va.bits.push_back((a >> k) & 1u);
        vb.bits.push_back((b >> k) & 1u);
      }
      const auto ctx = attribute_xor(va, vb);
      bool same = static_cast<int>(ctx.xor_bits.size()) == 4;
      int exclusive = 0;
      for (int k = 0; k < 4 && same; ++k) {
        const int want = kTruth[va.bits[static_cast<size_t>(k)]][vb.bits[static_cast<size_t>(k)]];
        same &= ctx.xor_bits[static_cast<size_t>(k)] == want;
        exclusive += want;
      }
      matched += same && ctx.exclusive == exclusive && ctx.total == 4;
    }
  return {matched == 256, fmt::format("{}/256 pairs match", matched)};
}

// --- 5 ----------------------------------------------------------------------

Verdict metric_oracles() {
  Stopwatch clock;
  Rng rng(2024);
  const std::vector<int> ks{1, 5, 10};
  double worst = 0;
  bool counts = true;
  for (int t = 0; t < 100; ++t) {
    const auto m = check::random_matrix(rng, 50, 200, 40, t % 2 == 1);
    const auto got = evaluate_matrix(m, ks);
    const auto want = check::brute_summary(m, ks);
    counts &= got.evaluated == want.evaluated && got.skipped == want.skipped;
    worst = std::max(worst, std::abs(got.mean_ap - want.mean_ap));
    for (int k : ks) worst = std::max(worst, std::abs(got.cmc.at(k) - want.cmc.at(k)));
  }
  const std::vector<double> row{0.1, 0.2, 0.3, 0.4, 0.5};
  const double hand = *average_precision(row, {true, false, true, false, false});
  const double t = clock.seconds();
  const bool ok = counts && worst <= 1e-12 && hand == 5.0 / 6.0 && t < 30;
  return {ok, fmt::format("100 matrices 50x200, max |diff| {:.1e}; hand AP {:.17g}; {:.2f}s", worst, hand, t)};
}

// --- 6 ----------------------------------------------------------------------

Verdict spatial_sampling() {
  Rng rng(6);
  const int64_t c = 3, h = 9, w = 9;
  const auto values = check::uniform_values(rng, static_cast<size_t>(c * h * w), -1, 1);
  const auto map = FeatureMap::make(c, h, w, values);
  const auto same = sample_region(map, AffineParams{}, h, w);
  double identity = 0;
  for (size_t i = 0; i < values.size(); ++i) identity = std::max(identity, std::abs(same.data[i] - values[i]));

  // Half-scale centered window: rows and columns 2..6 of the source.
  const int64_t oh = 13, ow = 11;
  const auto crop = sample_region(map, AffineParams{0.5, 0.5, 0, 0}, oh, ow);
  double bilinear = 0;
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t x = 0; x < ow; ++x) {
        const double py = 2.0 + 4.0 * static_cast<double>(y) / static_cast<double>(oh - 1);
        const double px = 2.0 + 4.0 * static_cast<double>(x) / static_cast<double>(ow - 1);
        const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(py), h - 2);
        const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(px), w - 2);
        const double fy = py - static_cast<double>(y0), fx = px - static_cast<double>(x0);
        const double want = (1 - fy) * (1 - fx) * map.at(ch, y0, x0) + (1 - fy) * fx * map.at(ch, y0, x0 + 1) +
                            fy * (1 - fx) * map.at(ch, y0 + 1, x0) + fy * fx * map.at(ch, y0 + 1, x0 + 1);
        bilinear = std::max(bilinear, std::abs(crop.at(ch, y, x) - want));
      }
  return {identity < 1e-6 && bilinear < 1e-5,
          fmt::format("identity max diff {:.1e}; half-scale crop vs bilinear oracle {:.1e}", identity, bilinear)};
}

// --- toy runs shared by 7, 8 and 9 --------------------------------------------

struct ToyRun {
  std::string root;
  ParsedDataset data;
  FixtureManifest manifest;
  std::map<uint64_t, std::vector<ProtocolResult>> full, base;
  std::map<uint64_t, double> seconds;
  std::unique_ptr<V2EModel> explain_model;  // full model, first seed
};

RunConfig toy_config(const std::string& root, uint64_t seed, bool streams) {
  RunConfig cfg = toy_run_config();
  cfg.dataset_root = root;
  cfg.seed = seed;
  cfg.model.eva.enabled = streams;
  cfg.model.adh.enabled = streams;
  return cfg;
}

const ProtocolResult& find(const std::vector<ProtocolResult>& rs, const Direction& d) {
  for (const auto& r : rs)
    if (r.direction == d) return r;
  throw RuntimeFault("missing protocol " + direction_tag(d));
}

ToyRun& toy_run(const std::string& workdir) {
  static std::unique_ptr<ToyRun> run;
  if (run) return *run;
  run = std::make_unique<ToyRun>();
  run->root = (fs::path(workdir) / "toy_fixture").string();
  FixtureOptions fo;
  fo.seed = 7;
  fo.n_ids = 48;
  fo.images_per_id_per_platform = 4;
  fo.twin_fraction = 0.0;
  run->manifest = generate_fixture(fo, run->root);
  run->data = prepare_dataset(toy_config(run->root, 1, true));
  for (uint64_t seed : {1, 2, 3}) {
    Stopwatch clock;
    for (bool streams : {true, false}) {
      auto out = train_model(toy_config(run->root, seed, streams), run->data.train);
      auto results = evaluate_protocols(*out.model, run->data);
      (streams ? run->full : run->base)[seed] = results;
      if (streams && seed == 1) run->explain_model = std::move(out.model);
    }
    run->seconds[seed] = clock.seconds();
  }
  return *run;
}

// --- 7 ----------------------------------------------------------------------

struct SyntheticPair {
  Image a, b;
  int label = 0;
  AttributeVector va, vb;
};

// Test identities re-rendered with one soft label changed; both images
// share platform and nuisance draw, so the label is the only difference.
std::vector<SyntheticPair> controlled_pairs(const ToyRun& run) {
  const auto& schema = schema88();
  const auto& b = toy_run_config().model.backbone;
  Rng rng(99);
  auto quantize = [](Image im) {
    for (auto& p : im.pixels) p = std::round(p * 255.f) / 255.f;
    return im;
  };
  std::vector<SyntheticPair> pairs;
  for (const auto& id : run.manifest.identities) {
    if (id.train) continue;
    for (size_t l = 0; l < schema.labels().size(); ++l) {
      auto cats = id.categories;
      const int size = schema.labels()[l].size();
      cats[l] = (cats[l] + 1 + rng.below(size - 1)) % size;
      const auto platform = kAllPlatforms[static_cast<size_t>(rng.below(3))];
      const uint64_t nuisance = rng.next();
      SyntheticPair p;
      p.a = resize_image(quantize(render_person(schema, id.categories, platform, nuisance, 128, 64)), b.input_height,
                         b.input_width);
      p.b = resize_image(quantize(render_person(schema, cats, platform, nuisance, 128, 64)), b.input_height,
                         b.input_width);
      p.label = static_cast<int>(l);
      p.va = AttributeVector::from_categories(schema, id.categories);
      p.vb = AttributeVector::from_categories(schema, cats);
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

double relative_gap(const DistanceDecomposition& d) {
  double sum = 0;
  for (auto it = d.per_attribute.rbegin(); it != d.per_attribute.rend(); ++it) sum += *it;
  return std::abs(d.reconstructed - sum) / std::max(std::abs(sum), 1e-300);
}

Verdict decomposition_identity(const std::string& workdir) {
  auto& run = toy_run(workdir);
  const auto& model = *run.explain_model;
  double worst = 0, distill = 0;
  int pairs = 0;
  const auto& split = run.data.protocols.at(kProtocolDirections[0]);
  std::vector<const Image*> images;
  for (const auto& r : split.query.records) images.push_back(&r.image);
  for (const auto& r : split.gallery.records) images.push_back(&r.image);
  if (images.size() > 128) images.resize(128);
  for (const auto& d : decompose_batch(model, images)) {
    worst = std::max(worst, relative_gap(d));
    distill += std::abs(d.total - d.reconstructed) / std::max(d.total, 1e-12);
    ++pairs;
  }
  for (const auto& p : controlled_pairs(run)) {
    worst = std::max(worst, relative_gap(explain_pair(model, schema88(), p.a, p.b).decomposition));
    ++pairs;
  }
  return {worst <= 1e-6, fmt::format("{} pairs, worst relative gap {:.1e} (mean |d - sum d^k| / d after training "
                                     "{:.3f}, informational)",
                                     pairs, worst, distill / std::max(pairs, 1))};
}

// --- 8 ----------------------------------------------------------------------

Verdict toy_run_criterion(const std::string& workdir) {
  Stopwatch clock;
  auto& run = toy_run(workdir);
  const Direction ac{CameraPlatform::Aerial, CameraPlatform::CCTV};
  bool rank1_ok = true;
  std::vector<std::string> r1;
  for (const auto& [seed, rs] : run.full) {
    const double v = find(rs, ac).cmc.at(1);
    rank1_ok &= v >= 0.80;
    r1.push_back(fmt::format("{:.3f}", v));
  }
  int wins = 0;
  std::vector<std::string> dirs;
  for (const auto& d : kProtocolDirections) {
    double full = 0, base = 0;
    for (uint64_t seed : {1, 2, 3}) {
      full += find(run.full.at(seed), d).mean_ap / 3;
      base += find(run.base.at(seed), d).mean_ap / 3;
    }
    wins += full >= base;
    dirs.push_back(fmt::format("{} {:.3f}/{:.3f}", direction_tag(d), full, base));
  }
  double train_time = 0;
  for (const auto& [_, s] : run.seconds) train_time += s;
  const bool ok = rank1_ok && wins >= 3 && train_time < 600;
  return {ok, fmt::format("(a) A->C Rank-1 per seed {} [{}]; (b) mean mAP full/stream-1 {} -> {}/4 directions [{}]; "
                          "6 trainings {:.0f}s",
                          fmt::join(r1, " "), rank1_ok ? "ok" : "below 0.80", fmt::join(dirs, ", "), wins,
                          wins >= 3 ? "ok" : "below 3", train_time)};
}

// --- 9 ----------------------------------------------------------------------

Verdict explainability(const std::string& workdir) {
  auto& run = toy_run(workdir);
  const auto& model = *run.explain_model;
  int hits = 0, any = 0, total = 0;
  for (const auto& p : controlled_pairs(run)) {
    const auto e = explain_pair(model, schema88(), p.a, p.b);
    const size_t quartile = e.ranked.size() / 4;
    int exclusive = 0, in_top = 0;
    for (size_t r = 0; r < e.ranked.size(); ++r) {
      const auto bit = static_cast<size_t>(e.ranked[r].bit);
      if (p.va.bits[bit] == p.vb.bits[bit]) continue;
      ++exclusive;
      in_top += r < quartile;
    }
    hits += exclusive > 0 && in_top == exclusive;
    any += in_top > 0;
    ++total;
  }
  const double rate = static_cast<double>(hits) / total;
  return {rate >= 0.70, fmt::format("changed group fully in top quartile on {}/{} pairs = {:.3f} (need 0.70); "
                                    "at least one bit in top quartile {:.3f}",
                                    hits, total, rate, static_cast<double>(any) / total)};
}

// --- 10 ---------------------------------------------------------------------

struct SplitCounts {
  int query_ids, query_images, gallery_ids, gallery_images;
};

Verdict split_accounting(const std::string& workdir) {
  using P = CameraPlatform;
  const std::vector<std::pair<Direction, SplitCounts>> table{
      {{P::Aerial, P::CCTV}, {534, 2356, 534, 6374}},
      {{P::Aerial, P::Wearable}, {519, 2209, 519, 12912}},
      {{P::CCTV, P::Aerial}, {534, 1811, 534, 14362}},
      {{P::Wearable, P::Aerial}, {519, 2340, 519, 12256}},
  };
  const fs::path root = fs::path(workdir) / "split_manifest";
  fs::remove_all(root);
  const auto& schema = schema88();
  {
    fs::create_directories(root);
    std::ofstream csv(root / "attributes.csv");
    csv << "person_id";
    for (const auto& l : schema.labels()) csv << ',' << l.name;
    csv << '\n';
    for (int id = 0; id < 534; ++id) {
      csv << id;
      for (const auto& l : schema.labels()) csv << ',' << l.categories[static_cast<size_t>(id % l.size())];
      csv << '\n';
    }
  }
  int files = 0;
  auto populate = [&](const fs::path& dir, P platform, int ids, int images) {
    fs::create_directories(dir);
    for (int id = 0; id < ids; ++id) {
      const int n = images / ids + (id < images % ids ? 1 : 0);
      for (int s = 0; s < n; ++s, ++files)
        std::ofstream(dir / fmt::format("{:04d}_{}_{:04d}.jpg", id, platform_code(platform), s));
    }
  };
  for (const auto& [d, c] : table) {
    const fs::path dir = root / "protocols" / fmt::format("{}-{}", platform_code(d.first), platform_code(d.second));
    populate(dir / "query", d.first, c.query_ids, c.query_images);
    populate(dir / "gallery", d.second, c.gallery_ids, c.gallery_images);
  }
  ParseOptions opts;
  opts.require_train = false;
  const auto parsed = parse_dataset(root.string(), schema, opts);
  bool ok = parsed.protocols.size() == 4;
  std::vector<std::string> parts;
  for (const auto& [d, c] : table) {
    auto it = parsed.protocols.find(d);
    if (it == parsed.protocols.end()) {
      ok = false;
      continue;
    }
    const auto& s = it->second;
    const SplitCounts got{static_cast<int>(s.query.identities().size()), static_cast<int>(s.query.records.size()),
                          static_cast<int>(s.gallery.identities().size()), static_cast<int>(s.gallery.records.size())};
    ok &= got.query_ids == c.query_ids && got.query_images == c.query_images && got.gallery_ids == c.gallery_ids &&
          got.gallery_images == c.gallery_images;
    parts.push_back(fmt::format("{} q {}/{} g {}/{}", direction_tag(d), got.query_ids, got.query_images,
                                got.gallery_ids, got.gallery_images));
  }
  fs::remove_all(root);
  return {ok, fmt::format("{} files; {}", files, fmt::join(parts, ", "))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"V2E acceptance criteria"};
  bool strict = false;
  std::string workdir;
  std::vector<int> only;
  app.add_flag("--strict", strict, "Exit non-zero when any criterion fails");
  app.add_option("--workdir", workdir, "Scratch directory (default: a fresh temporary directory)");
  app.add_option("--only", only, "Run only these criterion numbers")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  std::unique_ptr<check::TempDir> scratch;
  if (workdir.empty()) {
    scratch = std::make_unique<check::TempDir>("acceptance");
    workdir = scratch->path();
  }
  fs::create_directories(workdir);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"loss and spatial gradients vs finite differences", gradients},
      {"closed-form loss oracles", loss_oracles},
      {"delta activation", delta_checks},
      {"XOR over all 4-bit pairs", xor_truth_table},
      {"mAP/CMC vs brute force", metric_oracles},
      {"spatial sampling", spatial_sampling},
      {"decomposition identity", [&] { return decomposition_identity(workdir); }},
      {"end-to-end toy run", [&] { return toy_run_criterion(workdir); }},
      {"explainability on one-label pairs", [&] { return explainability(workdir); }},
      {"split accounting", [&] { return split_accounting(workdir); }},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << fmt::format("{} {:2d} {}: {}", v.pass ? "PASS" : "FAIL", number, criteria[i].first, v.detail)
              << std::endl;
  }
  return strict && failed ? 1 : 0;
}
