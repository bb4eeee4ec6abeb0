#pragma once

// Training: identity-balanced sampling, optimizers and schedule, the
// composite-loss step, checkpoints, protocol evaluation and ablation runs.

#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "v2e/config.hpp"
#include "v2e/dataset.hpp"
#include "v2e/losses.hpp"
#include "v2e/model.hpp"

namespace v2e {

class IdentitySampler {
 public:
  // Throws ConfigError when the split has fewer than p identities.
  IdentitySampler(const DatasetSplit& split, int p, int k, uint64_t seed);

  // One pass in which every identity is drawn at least once. Each batch
  // holds p distinct identities with k record indices each; identities with
  // fewer than k images are sampled with replacement.
  std::vector<std::vector<size_t>> epoch();
  int batches_per_epoch() const;

 private:
  int p_, k_;
  Rng rng_;
  std::vector<int> ids_;
  std::map<int, std::vector<size_t>> by_id_;
};

// Linear warm-up over the first warmup_fraction of steps, then cosine decay.
double learning_rate(const OptimizerConfig& cfg, int64_t step, int64_t total_steps);

class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, std::vector<ag::Tensor> params);
  // Applies one update; gradients are divided by grad_scale first.
  void step(double lr, double grad_scale = 1.0);
  const std::vector<ag::Tensor>& params() const { return params_; }

 private:
  OptimizerConfig cfg_;
  std::vector<ag::Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

enum class TrainStage { Joint, TargetOnly, AttributeOnly };

struct TrainBatch {
  std::vector<const Image*> images;
  std::vector<int> labels;  // class indices
  std::vector<const AttributeVector*> attributes;
};

struct StepResult {
  LossComponents components;
  double total = 0;
  double lr = 0;
  int pairs = 0;
  bool skipped = false;
  double loss_scale = 1;
};

struct StepState {
  double loss_scale = 1;
  int good_steps = 0;
};

// Forward, composite loss, single backward pass and update. Disabled
// streams contribute zero loss and are not in `opt`. In AMP mode a
// non-finite step is dropped and the loss scale halved; in full precision
// it raises RuntimeFault.
StepResult train_step(const TrainBatch& batch, V2EModel& model, const RunConfig& cfg, Optimizer& opt, double lr,
                      StepState& state, TrainStage stage = TrainStage::Joint);

struct TrainOutcome {
  std::unique_ptr<V2EModel> model;
  std::vector<StepResult> steps;
  std::map<int, int> class_of_id;
};

using ProgressFn = std::function<void(int epoch, int step, const StepResult&)>;

// Train records must carry pixels at the model resolution. Each step is
// appended to `log` as one JSON object per line when given.
TrainOutcome train_model(const RunConfig& cfg, const DatasetSplit& train, std::ostream* log = nullptr,
                         const ProgressFn& progress = nullptr);

std::string step_log_row(int epoch, int step, const StepResult& r);

// Named-array archive holding the run config and every parameter.
void save_checkpoint(const std::string& path, const V2EModel& model, const RunConfig& cfg);
struct LoadedCheckpoint {
  RunConfig config;
  std::unique_ptr<V2EModel> model;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

// Parses the dataset for `cfg` and loads pixels at the model resolution.
ParsedDataset prepare_dataset(const RunConfig& cfg, bool require_train = true);
AttributeSchema schema_for(const RunConfig& cfg);

// Runs every available protocol in the standard direction order.
std::vector<ProtocolResult> evaluate_protocols(const V2EModel& model, const ParsedDataset& data, int chunk = 64);

struct AblationRow {
  std::string tag;
  bool eva = false;
  bool ep = false;
  std::vector<ProtocolResult> results;
};

// Trains the four stream-toggle combinations with the base seed and
// evaluates each on every protocol.
std::vector<AblationRow> run_ablation(const RunConfig& base, const ParsedDataset& data,
                                      const std::function<void(const std::string&)>& notify = nullptr);
std::string ablation_tag(const RunConfig& cfg);

}  // namespace v2e
