#pragma once

// Run configuration: a single JSON document with dotted-key overrides.
// Precedence: built-in defaults < config file < --seed < --set overrides.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "v2e/attributes.hpp"
#include "v2e/augment.hpp"
#include "v2e/losses.hpp"
#include "v2e/model.hpp"

namespace v2e {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double warmup_fraction = 0.05;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
};

struct SamplerConfig {
  int p = 6;  // identities per batch
  int k = 4;  // images per identity
};

struct RunConfig {
  DatasetMode mode = DatasetMode::AgReidV2;
  std::string dataset_root;
  std::string schema_path;  // empty: built-in schema for `mode`
  ModelConfig model;
  LossWeights loss;
  SamplerConfig sampler;
  OptimizerConfig optimizer;
  AugmentConfig augment;
  int epochs = 120;
  uint64_t seed = 1;
  // Emulated reduced-precision forward/backward with dynamic loss scaling.
  bool amp = false;
  double initial_loss_scale = 1024.0;
  // Train Streams 1-2 first, then Stream 3 against the frozen target.
  bool freeze_target = false;
  double target_fraction = 0.5;  // share of epochs in the first stage
  int max_query_per_id = 6;
  int eval_chunk = 64;

  void validate() const;  // throws ConfigError
};

// Defaults sized for desk-scale runs on the synthetic fixture.
RunConfig toy_run_config();

nlohmann::json to_json(const RunConfig& c);
// Keys absent from `j` keep their value from `base`. Rejects keys that do
// not exist in the schema of RunConfig.
RunConfig run_config_from_json(const nlohmann::json& j, const RunConfig& base = RunConfig{});
RunConfig load_run_config(const std::string& path, const RunConfig& base = RunConfig{});

// "a.b.c=value". The value is parsed as JSON when possible, else taken as a
// string. Unknown keys raise ConfigError naming the key.
void apply_override(nlohmann::json& doc, const std::string& assignment);

std::string_view optimizer_name(OptimizerKind k);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace v2e
