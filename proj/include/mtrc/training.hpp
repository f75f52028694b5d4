#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtrc/model.hpp"
#include "mtrc/synth.hpp"

namespace mtrc {

struct OptimizerState {
  Grads velocity;
  double lr_backbone = 2e-2;
  double lr_branches = 1e-1;
  double momentum = 0.9;
  // coefficient applied to the weight inside the momentum update; the trainer
  // sets this to 2*l3 so the update matches the gradient of l3*||W||^2
  double weight_decay = 0.0;

  static OptimizerState create(const ModelParams& params, double lr_backbone,
                               double lr_branches, double momentum,
                               double weight_decay);
};

// v <- momentum*v + grad + weight_decay*w;  w <- w - lr(partition)*v.
// Frozen partitions are untouched, velocity included.
void sgd_step(ModelParams& params, const Grads& grads, OptimizerState& opt,
              const PartitionMask& trainable);

struct PlateauConfig {
  int patience = 3;
  double min_delta = 1e-3;
};

class PlateauTracker {
 public:
  explicit PlateauTracker(PlateauConfig cfg) : cfg_(cfg) {}
  // feeds one epoch validation loss; true when the rates should drop by 10x
  bool observe(double loss);

 private:
  PlateauConfig cfg_;
  double best_ = 1e300;
  int bad_epochs_ = 0;
};

// Folds a full loss history through the tracker, dividing both learning
// rates by 10 on each plateau event.
OptimizerState lr_on_plateau(const std::vector<double>& history,
                             OptimizerState opt, const PlateauConfig& cfg);

enum class Strategy {
  three_step,
  ts1,
  ts2,
  single_tool,
  single_phase,
  mtrcnet_no_cl,
};

Strategy strategy_from_string(const std::string& name);
const char* strategy_name(Strategy s);

struct StageConfig {
  std::string name;
  int epochs = 1;
  PartitionMask trainable;
  ActiveLosses losses;
};

struct TrainPlan {
  Strategy strategy = Strategy::three_step;
  // epochs for the three steps; single-stage strategies run for
  // stage_epochs[0] + stage_epochs[2] so every strategy gives its branch
  // weights the same budget (step-2 only touches the mapping cell)
  std::vector<int> stage_epochs = {10, 3, 10};
  int clip_len = 10;
  int clips_per_video = 0;  // 0 -> max(1, video_len / clip_len)
  int batch_size = 8;
  uint64_t seed = 0;
  Lambdas lambdas;
  PlateauConfig plateau;
  double lr_backbone = 2e-2;
  double lr_branches = 1e-1;
  double momentum = 0.9;
  int threads = 2;
  bool deterministic = false;  // forces single-threaded batches
  bool augment = true;

  int effective_threads() const { return deterministic ? 1 : threads; }
};

nlohmann::json train_plan_to_json(const TrainPlan& plan);
TrainPlan train_plan_from_json(const nlohmann::json& j);

std::vector<StageConfig> plan_stages(const TrainPlan& plan);

struct TrainContext {
  const LoadedDataset* data = nullptr;
  const TrainPlan* plan = nullptr;
  OptimizerState* opt = nullptr;
  Rng rng{0};
  int64_t step = 0;
  std::ostream* log = nullptr;  // per-step CSV rows
};

struct StageResult {
  std::vector<LossBreakdown> steps;
  std::vector<double> epoch_losses;
};

// Runs one stage over the train split: samples clips, applies the stage's
// freeze mask and active losses, and steps the optimizer. Deterministic for a
// given context rng. Numeric failures restore the last epoch snapshot and
// raise TrainingError.
StageResult train_stage(ModelParams& params, const StageConfig& stage,
                        TrainContext& ctx);

struct TrainResult {
  ModelParams params;
  std::vector<std::string> checkpoints;
  std::string steps_csv;
  std::string manifest;
};

TrainResult run_plan(const ArchConfig& arch, const TrainPlan& plan,
                     const LoadedDataset& data, const std::string& out_dir);

// Checkpoints reuse the weight container with extra "opt/..." arrays.
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const OptimizerState& opt);
ModelParams load_checkpoint(const std::string& path, OptimizerState* opt);

}  // namespace mtrc
