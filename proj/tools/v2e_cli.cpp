// v2e command-line entry point.
//
// Exit codes: 0 success, 1 invalid arguments/config/data, 2 runtime fault.
// Config precedence, lowest first: --preset, --config file, --seed, --set.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "v2e/config.hpp"
#include "v2e/dataset.hpp"
#include "v2e/errors.hpp"
#include "v2e/fixture.hpp"
#include "v2e/model.hpp"
#include "v2e/report.hpp"
#include "v2e/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace v2e;

namespace {

struct CommonArgs {
  std::string preset = "toy";
  std::string config;
  std::string out;
  std::optional<uint64_t> seed;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool out_required = true) {
  cmd->add_option("--preset", a.preset, "Base settings before the config file: toy or full")
      ->check(CLI::IsMember({"toy", "full"}))
      ->capture_default_str();
  cmd->add_option("--config", a.config, "Run-config JSON file");
  auto* out = cmd->add_option("--out", a.out, "Output directory (created if absent)");
  if (out_required) out->required();
  cmd->add_option("--seed", a.seed, "Random seed");
  cmd->add_option("--set", a.sets, "Override a config value, e.g. --set optimizer.lr=0.01 (repeatable)");
}

RunConfig resolve_config(const CommonArgs& a, const RunConfig* base_override = nullptr) {
  RunConfig base = base_override ? *base_override : (a.preset == "full" ? RunConfig{} : toy_run_config());
  RunConfig cfg = a.config.empty() ? base : load_run_config(a.config, base);
  json doc = to_json(cfg);
  if (a.seed) doc["seed"] = *a.seed;
  for (const auto& s : a.sets) apply_override(doc, s);
  return run_config_from_json(doc, cfg);
}

void write_snapshot(const std::string& out_dir, const json& doc) {
  fs::create_directories(out_dir);
  std::ofstream f(fs::path(out_dir) / "resolved_config.json");
  if (!f) throw RuntimeFault("cannot write resolved_config.json in " + out_dir);
  f << doc.dump(2) << '\n';
}

std::vector<AttributeImpact> average_impacts(const V2EModel& model, const AttributeSchema& schema,
                                             const ParsedDataset& data, int chunk) {
  std::vector<AttributeImpact> total;
  int weight = 0;
  for (const auto& [dir, split] : data.protocols) {
    auto part = rank1_attribute_impact(model, schema, split, chunk);
    if (part.empty()) continue;
    const int n = static_cast<int>(split.query.records.size());
    if (total.empty()) {
      total = part;
      for (auto& t : total) t.share *= n;
    } else {
      for (size_t k = 0; k < total.size(); ++k) total[k].share += part[k].share * n;
    }
    weight += n;
  }
  for (auto& t : total) t.share /= std::max(weight, 1);
  return total;
}

void print_report(const ReportFiles& files) {
  std::ifstream in(files.text_path);
  std::cout << in.rdbuf();
  for (const auto& n : files.notices) std::cout << "note: " << n << '\n';
  std::cout << "wrote " << files.json_path << ", " << files.csv_path;
  if (files.plot_path) std::cout << ", " << *files.plot_path;
  std::cout << '\n';
}

// --- subcommands -----------------------------------------------------------

struct FixtureArgs {
  CommonArgs common;
  int ids = 48;
  int per_platform = 4;
  double twins = 0.25;
  int height = 128, width = 64;
};

void run_fixture_gen(const FixtureArgs& a) {
  FixtureOptions fo;
  fo.seed = a.common.seed.value_or(7);
  fo.n_ids = a.ids;
  fo.images_per_id_per_platform = a.per_platform;
  fo.twin_fraction = a.twins;
  fo.canvas_height = a.height;
  fo.canvas_width = a.width;
  if (fo.n_ids < 2) throw ConfigError("--ids must be at least 2");
  if (fo.images_per_id_per_platform < 1) throw ConfigError("--per-platform must be at least 1");
  if (fo.twin_fraction < 0 || fo.twin_fraction >= 1) throw ConfigError("--twins must lie in [0,1)");
  const auto manifest = generate_fixture(fo, a.common.out);
  RunConfig cfg = resolve_config(a.common);
  cfg.dataset_root = fs::absolute(a.common.out).string();
  json doc = to_json(cfg);
  doc["fixture"] = {{"seed", fo.seed},
                    {"ids", fo.n_ids},
                    {"images_per_id_per_platform", fo.images_per_id_per_platform},
                    {"twin_fraction", fo.twin_fraction}};
  write_snapshot(a.common.out, doc);
  fmt::print("fixture: {} identities, {} images under {}\n", manifest.identities.size(), manifest.records.size(),
             a.common.out);
}

struct TrainArgs {
  CommonArgs common;
  std::string data;
  int log_every = 20;
};

void run_train(const TrainArgs& a) {
  RunConfig cfg = resolve_config(a.common);
  if (!a.data.empty()) cfg.dataset_root = a.data;
  if (cfg.dataset_root.empty()) throw ConfigError("no dataset: pass --data or set dataset_root");
  write_snapshot(a.common.out, to_json(cfg));
  auto data = prepare_dataset(cfg);
  fmt::print("training {} on {} images ({} identities)\n", ablation_tag(cfg), data.train.records.size(),
             data.train.identities().size());
  std::ofstream log(fs::path(a.common.out) / "train_log.jsonl");
  auto outcome = train_model(cfg, data.train, &log, [&](int epoch, int step, const StepResult& r) {
    if (a.log_every > 0 && step % a.log_every == 0)
      fmt::print("epoch {:4d} step {:6d} lr {:.2e} total {:.4f}  tri {:.4f} ce {:.4f} d {:.4f} p1 {:.4f} p2 {:.4f}{}\n",
                 epoch, step, r.lr, r.total, r.components.triplet, r.components.ce, r.components.distill,
                 r.components.p1, r.components.p2, r.skipped ? "  (skipped)" : "");
  });
  const auto ckpt = (fs::path(a.common.out) / "model.ckpt").string();
  save_checkpoint(ckpt, *outcome.model, cfg);
  fmt::print("wrote {} after {} steps\n", ckpt, outcome.steps.size());
}

struct EvalArgs {
  CommonArgs common;
  std::string checkpoint;
  std::string data;
};

RunConfig checkpoint_config(const CommonArgs& common, const RunConfig& stored) {
  RunConfig cfg = resolve_config(common, &stored);
  if (to_json(cfg)["model"] != to_json(stored)["model"])
    throw ConfigError("model settings come from the checkpoint and cannot be overridden");
  return cfg;
}

void run_evaluate(const EvalArgs& a) {
  if (a.checkpoint.empty()) throw ConfigError("evaluate requires --checkpoint");
  auto ck = load_checkpoint(a.checkpoint);
  RunConfig cfg = checkpoint_config(a.common, ck.config);
  if (!a.data.empty()) cfg.dataset_root = a.data;
  if (cfg.dataset_root.empty()) throw ConfigError("no dataset: pass --data or set dataset_root");
  write_snapshot(a.common.out, to_json(cfg));
  auto data = prepare_dataset(cfg, false);
  if (data.protocols.empty()) throw ConfigError("dataset at " + cfg.dataset_root + " has no query/gallery splits");
  ReportRow row{ablation_tag(cfg), evaluate_protocols(*ck.model, data, cfg.eval_chunk)};
  const auto impacts = average_impacts(*ck.model, schema_for(cfg), data, cfg.eval_chunk);
  print_report(emit_report({row}, impacts, a.common.out));
}

struct ExplainArgs {
  CommonArgs common;
  std::string checkpoint;
  std::vector<std::string> pair;
  int top = 8;
};

void run_explain(const ExplainArgs& a) {
  if (a.checkpoint.empty()) throw ConfigError("explain requires --checkpoint");
  auto ck = load_checkpoint(a.checkpoint);
  RunConfig cfg = checkpoint_config(a.common, ck.config);
  if (!cfg.model.adh.enabled) throw ConfigError("explain needs a checkpoint trained with the attribute stream (ep)");
  write_snapshot(a.common.out, to_json(cfg));
  const auto& b = cfg.model.backbone;
  for (const auto& p : a.pair)
    if (!fs::exists(p)) throw ConfigError("image not found: " + p);
  const Image xi = load_image(a.pair[0], b.input_height, b.input_width);
  const Image xj = load_image(a.pair[1], b.input_height, b.input_width);
  const auto e = explain_pair(*ck.model, schema_for(cfg), xi, xj);
  write_explanation(e, xi, xj, a.common.out, a.top);
  for (const auto& w : e.warnings) std::cerr << "warning: " << w << '\n';
  fmt::print("distance {:.4f}, reconstructed {:.4f}\n", e.decomposition.total, e.decomposition.reconstructed);
  for (int i = 0; i < std::min<int>(a.top, static_cast<int>(e.ranked.size())); ++i)
    fmt::print("{:3d}. {:<32} d^k {:.5f}  share {:.3f}\n", i + 1, e.ranked[static_cast<size_t>(i)].name,
               e.ranked[static_cast<size_t>(i)].distance, e.ranked[static_cast<size_t>(i)].share);
  fmt::print("wrote explanation.json, explanation.txt, saliency.png under {}\n", a.common.out);
}

struct AblateArgs {
  CommonArgs common;
  std::string data;
};

void run_ablate(const AblateArgs& a) {
  RunConfig cfg = resolve_config(a.common);
  if (!a.data.empty()) cfg.dataset_root = a.data;
  if (cfg.dataset_root.empty()) throw ConfigError("no dataset: pass --data or set dataset_root");
  write_snapshot(a.common.out, to_json(cfg));
  auto data = prepare_dataset(cfg);
  auto rows = run_ablation(cfg, data, [](const std::string& msg) { fmt::print("{}\n", msg); });
  print_report(emit_report(report_rows(rows), {}, a.common.out));
}

struct ReportArgs {
  CommonArgs common;
  std::vector<std::string> results;
};

void run_report(const ReportArgs& a) {
  std::vector<ReportRow> rows;
  std::vector<AttributeImpact> impacts;
  for (const auto& path : a.results) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open results file " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ParseError(path, e.what());
    }
    for (auto& r : rows_from_json(j)) rows.push_back(std::move(r));
    if (impacts.empty()) impacts = impacts_from_json(j);
  }
  if (rows.empty()) throw ConfigError("the results files hold no model rows");
  json snapshot{{"results", a.results}};
  write_snapshot(a.common.out, snapshot);
  print_report(emit_report(rows, impacts, a.common.out));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"V2E aerial-ground person re-identification: fixtures, training, evaluation and explanations"};
  app.require_subcommand(1);

  FixtureArgs fx;
  auto* fixture = app.add_subcommand("fixture-gen", "Generate a synthetic aerial/ground fixture dataset");
  add_common(fixture, fx.common);
  fixture->add_option("--ids", fx.ids, "Number of identities, split half train / half test")->capture_default_str();
  fixture->add_option("--per-platform", fx.per_platform, "Images per identity per platform")->capture_default_str();
  fixture->add_option("--twins", fx.twins, "Fraction of identities differing from another in one label")
      ->capture_default_str();
  fixture->add_option("--height", fx.height, "Canvas height")->capture_default_str();
  fixture->add_option("--width", fx.width, "Canvas width")->capture_default_str();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model and write model.ckpt");
  add_common(train, tr.common);
  train->add_option("--data", tr.data, "Dataset root (overrides dataset_root)");
  train->add_option("--log-every", tr.log_every, "Print every N steps (0 disables)")->capture_default_str();

  EvalArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on all four protocol directions");
  add_common(evaluate, ev.common);
  evaluate->add_option("--checkpoint", ev.checkpoint, "Checkpoint written by train");
  evaluate->add_option("--data", ev.data, "Dataset root (overrides the checkpoint's dataset_root)");

  ExplainArgs ex;
  auto* explain = app.add_subcommand("explain", "Decompose the distance of one image pair over attributes");
  add_common(explain, ex.common);
  explain->add_option("--checkpoint", ex.checkpoint, "Checkpoint written by train");
  explain->add_option("--pair", ex.pair, "Two image paths")->expected(2)->required();
  explain->add_option("--top", ex.top, "Attributes shown in the saliency grid")->capture_default_str();

  AblateArgs ab;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the four stream combinations");
  add_common(ablate, ab.common);
  ablate->add_option("--data", ab.data, "Dataset root (overrides dataset_root)");

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Rebuild tables and plots from results.json files");
  add_common(report, rp.common);
  report->add_option("--results", rp.results, "results.json files; rows are concatenated")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*fixture) run_fixture_gen(fx);
    if (*train) run_train(tr);
    if (*evaluate) run_evaluate(ev);
    if (*explain) run_explain(ex);
    if (*ablate) run_ablate(ab);
    if (*report) run_report(rp);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "fault: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
