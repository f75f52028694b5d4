#include "mtrc/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>

#include "mtrc/losses.hpp"
#include "mtrc/serialize.hpp"
#include "mtrc/weights_io.hpp"

namespace fs = std::filesystem;

namespace mtrc {

OptimizerState OptimizerState::create(const ModelParams& params,
                                      double lr_backbone, double lr_branches,
                                      double momentum, double weight_decay) {
  if (lr_backbone <= 0.0 || lr_branches <= 0.0)
    throw ConfigError("OptimizerState: learning rates must be positive");
  OptimizerState opt;
  opt.velocity = zeros_like(params);
  opt.lr_backbone = lr_backbone;
  opt.lr_branches = lr_branches;
  opt.momentum = momentum;
  opt.weight_decay = weight_decay;
  return opt;
}

void sgd_step(ModelParams& params, const Grads& grads, OptimizerState& opt,
              const PartitionMask& trainable) {
  for (int pi = 0; pi < kNumPartitions; ++pi) {
    const auto part = static_cast<Partition>(pi);
    if (!trainable.get(part)) continue;
    const double lr =
        part == Partition::backbone ? opt.lr_backbone : opt.lr_branches;
    auto& pset = params.partition(part);
    const auto& gset = grads.partition(part);
    auto& vset = opt.velocity.partition(part);
    if (pset.items.size() != gset.items.size())
      throw DimensionError("sgd_step: gradient layout mismatch");
    for (size_t i = 0; i < pset.items.size(); ++i) {
      Tensor& w = pset.items[i].tensor;
      const Tensor& g = gset.items[i].tensor;
      Tensor& v = vset.items[i].tensor;
      if (g.size() != w.size() || v.size() != w.size())
        throw DimensionError("sgd_step: tensor shape mismatch in " +
                             std::string(partition_name(part)));
      for (int64_t j = 0; j < w.size(); ++j) {
        if (!std::isfinite(g[j]))
          throw TrainingError(std::string("non-finite gradient in partition ") +
                              partition_name(part));
        v[j] = opt.momentum * v[j] + g[j] + opt.weight_decay * w[j];
        w[j] -= lr * v[j];
      }
    }
  }
}

bool PlateauTracker::observe(double loss) {
  if (loss < best_ - cfg_.min_delta) {
    best_ = loss;
    bad_epochs_ = 0;
    return false;
  }
  ++bad_epochs_;
  if (bad_epochs_ >= cfg_.patience) {
    bad_epochs_ = 0;  // one trigger per plateau event
    return true;
  }
  return false;
}

OptimizerState lr_on_plateau(const std::vector<double>& history,
                             OptimizerState opt, const PlateauConfig& cfg) {
  if (history.empty()) throw ConfigError("lr_on_plateau: empty history");
  PlateauTracker tracker(cfg);
  for (double loss : history) {
    if (tracker.observe(loss)) {
      opt.lr_backbone /= 10.0;
      opt.lr_branches /= 10.0;
    }
  }
  return opt;
}

Strategy strategy_from_string(const std::string& name) {
  if (name == "three_step") return Strategy::three_step;
  if (name == "TS1" || name == "ts1") return Strategy::ts1;
  if (name == "TS2" || name == "ts2") return Strategy::ts2;
  if (name == "single_tool") return Strategy::single_tool;
  if (name == "single_phase") return Strategy::single_phase;
  if (name == "mtrcnet_no_cl") return Strategy::mtrcnet_no_cl;
  throw ConfigError("unknown strategy: " + name);
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::three_step: return "three_step";
    case Strategy::ts1: return "TS1";
    case Strategy::ts2: return "TS2";
    case Strategy::single_tool: return "single_tool";
    case Strategy::single_phase: return "single_phase";
    case Strategy::mtrcnet_no_cl: return "mtrcnet_no_cl";
  }
  return "?";
}

nlohmann::json train_plan_to_json(const TrainPlan& p) {
  return nlohmann::json{
      {"strategy", strategy_name(p.strategy)},
      {"stage_epochs", p.stage_epochs},
      {"clip_len", p.clip_len},
      {"clips_per_video", p.clips_per_video},
      {"batch_size", p.batch_size},
      {"seed", p.seed},
      {"lambda1", p.lambdas.l1},
      {"lambda2", p.lambdas.l2},
      {"lambda3", p.lambdas.l3},
      {"plateau_patience", p.plateau.patience},
      {"plateau_min_delta", p.plateau.min_delta},
      {"lr_backbone", p.lr_backbone},
      {"lr_branches", p.lr_branches},
      {"momentum", p.momentum},
      {"threads", p.threads},
      {"deterministic", p.deterministic},
      {"augment", p.augment},
  };
}

TrainPlan train_plan_from_json(const nlohmann::json& j) {
  TrainPlan p;
  if (j.contains("strategy"))
    p.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  if (j.contains("stage_epochs"))
    p.stage_epochs = j.at("stage_epochs").get<std::vector<int>>();
  p.clip_len = j.value("clip_len", p.clip_len);
  p.clips_per_video = j.value("clips_per_video", p.clips_per_video);
  p.batch_size = j.value("batch_size", p.batch_size);
  p.seed = j.value("seed", p.seed);
  p.lambdas.l1 = j.value("lambda1", p.lambdas.l1);
  p.lambdas.l2 = j.value("lambda2", p.lambdas.l2);
  p.lambdas.l3 = j.value("lambda3", p.lambdas.l3);
  p.plateau.patience = j.value("plateau_patience", p.plateau.patience);
  p.plateau.min_delta = j.value("plateau_min_delta", p.plateau.min_delta);
  p.lr_backbone = j.value("lr_backbone", p.lr_backbone);
  p.lr_branches = j.value("lr_branches", p.lr_branches);
  p.momentum = j.value("momentum", p.momentum);
  p.threads = j.value("threads", p.threads);
  p.deterministic = j.value("deterministic", p.deterministic);
  p.augment = j.value("augment", p.augment);
  return p;
}

std::vector<StageConfig> plan_stages(const TrainPlan& plan) {
  if (plan.stage_epochs.size() != 3)
    throw ConfigError("TrainPlan: stage_epochs must have 3 entries");
  for (int e : plan.stage_epochs)
    if (e < 1) throw ConfigError("TrainPlan: epochs must be >= 1");
  if (plan.clip_len < 1 || plan.batch_size < 1)
    throw ConfigError("TrainPlan: clip_len and batch_size must be >= 1");

  const int e1 = plan.stage_epochs[0];
  const int e2 = plan.stage_epochs[1];
  const int e3 = plan.stage_epochs[2];
  const int joint = e1 + e3;

  PartitionMask branches = PartitionMask::all();
  branches.mapping_cell = false;
  PartitionMask map_only = PartitionMask::none();
  map_only.mapping_cell = true;

  ActiveLosses tool_phase;
  tool_phase.corr = false;
  ActiveLosses mapped;
  mapped.tool = false;
  mapped.phase = false;
  mapped.corr = false;
  mapped.mapped_tool = true;
  ActiveLosses full;
  ActiveLosses tool_only;
  tool_only.phase = false;
  tool_only.corr = false;
  ActiveLosses phase_only;
  phase_only.tool = false;
  phase_only.corr = false;

  switch (plan.strategy) {
    case Strategy::three_step:
      return {{"joint", e1, branches, tool_phase},
              {"mapping", e2, map_only, mapped},
              {"full", e3, PartitionMask::all(), full}};
    case Strategy::ts1:
      return {{"joint_full", joint, PartitionMask::all(), full}};
    case Strategy::ts2:
      return {{"joint", e1, branches, tool_phase},
              {"mapping", e2, map_only, mapped},
              {"full_frozen_map", e3, branches, full}};
    case Strategy::single_tool: {
      PartitionMask m = PartitionMask::none();
      m.backbone = true;
      m.tool_head = true;
      return {{"tool", joint, m, tool_only}};
    }
    case Strategy::single_phase: {
      PartitionMask m = PartitionMask::none();
      m.backbone = true;
      m.phase_head = true;
      return {{"phase", joint, m, phase_only}};
    }
    case Strategy::mtrcnet_no_cl:
      return {{"joint", joint, branches, tool_phase}};
  }
  throw ConfigError("unknown strategy");
}

namespace {

struct ClipRef {
  const VideoRecord* video;
  int start;
};

std::vector<ClipRef> sample_epoch_clips(const LoadedDataset& data,
                                        const TrainPlan& plan, Rng& rng) {
  std::vector<ClipRef> clips;
  for (const auto& id : data.split.train_videos) {
    const VideoRecord& v = data.video(id);
    if (v.length < plan.clip_len) continue;
    const int grid = v.length - plan.clip_len + 1;
    int k = plan.clips_per_video > 0 ? plan.clips_per_video
                                     : std::max(1, v.length / plan.clip_len);
    k = std::min(k, grid);
    // partial Fisher-Yates: k distinct starts
    std::vector<int> starts(grid);
    std::iota(starts.begin(), starts.end(), 0);
    for (int i = 0; i < k; ++i) {
      const int j = rng.uniform_int(i, grid - 1);
      std::swap(starts[i], starts[j]);
      clips.push_back({&v, starts[i]});
    }
  }
  // global shuffle
  for (int i = static_cast<int>(clips.size()) - 1; i > 0; --i) {
    const int j = rng.uniform_int(0, i);
    std::swap(clips[i], clips[j]);
  }
  return clips;
}

ClipBatch assemble_batch(const std::vector<ClipRef>& refs, size_t begin,
                         size_t end, const ArchConfig& arch,
                         const TrainPlan& plan, Rng& rng) {
  ClipBatch batch;
  batch.batch = static_cast<int>(end - begin);
  batch.n_f = plan.clip_len;
  batch.channels = arch.channels;
  batch.height = arch.frame_size;
  batch.width = arch.frame_size;
  batch.frames.resize(static_cast<int64_t>(batch.batch) * batch.n_f *
                      batch.frame_stride());
  const int num_tools = arch.num_tools;
  batch.tool_labels.resize(static_cast<int64_t>(batch.batch) * batch.n_f *
                           num_tools);
  batch.phase_labels.resize(static_cast<int64_t>(batch.batch) * batch.n_f);

  for (size_t i = begin; i < end; ++i) {
    const int b = static_cast<int>(i - begin);
    const VideoRecord& v = *refs[i].video;
    const int start = refs[i].start;
    if (v.channels != arch.channels || v.height < arch.frame_size ||
        v.width < arch.frame_size)
      throw ConfigError("video frames are smaller than the model frame_size");
    AugmentParams aug;
    if (plan.augment) {
      aug = sample_augment(v.height, arch.frame_size, rng);
    } else {
      aug.dx = (v.width - arch.frame_size) / 2;
      aug.dy = (v.height - arch.frame_size) / 2;
    }
    for (int t = 0; t < plan.clip_len; ++t) {
      apply_augment(v.frame(start + t), v.channels, v.height, v.width, aug,
                    arch.frame_size, batch.frame(b, t));
      batch.phase_labels[static_cast<int64_t>(b) * batch.n_f + t] =
          v.phase_labels[start + t];
      for (int c = 0; c < num_tools; ++c)
        batch.tool_labels[(static_cast<int64_t>(b) * batch.n_f + t) * num_tools +
                          c] =
            v.tool_labels[static_cast<size_t>(start + t) * num_tools + c];
    }
    batch.video_ids.push_back(v.video_id);
    batch.start_frames.push_back(start);
  }
  return batch;
}

}  // namespace

StageResult train_stage(ModelParams& params, const StageConfig& stage,
                        TrainContext& ctx) {
  const TrainPlan& plan = *ctx.plan;
  const LoadedDataset& data = *ctx.data;
  StageResult result;
  PlateauTracker tracker(plan.plateau);
  ModelParams snapshot = params;
  Grads snapshot_velocity = ctx.opt->velocity;

  for (int epoch = 0; epoch < stage.epochs; ++epoch) {
    auto clips = sample_epoch_clips(data, plan, ctx.rng);
    if (clips.empty())
      throw TrainingError("no clips: videos shorter than clip_len " +
                          std::to_string(plan.clip_len));
    double epoch_sum = 0.0;
    int epoch_steps = 0;
    try {
      for (size_t at = 0; at < clips.size(); at += plan.batch_size) {
        const size_t end = std::min(clips.size(), at + plan.batch_size);
        ClipBatch batch = assemble_batch(clips, at, end, params.config, plan,
                                         ctx.rng);
        Grads grads = zeros_like(params);
        BatchEval ev = evaluate_batch(batch, params, plan.lambdas, stage.losses,
                                      stage.trainable, &grads,
                                      plan.effective_threads());
        sgd_step(params, grads, *ctx.opt, stage.trainable);
        if (ctx.log)
          (*ctx.log) << losses::csv_row(ctx.step, ev.breakdown) << '\n';
        ++ctx.step;
        result.steps.push_back(ev.breakdown);
        epoch_sum += ev.breakdown.total;
        ++epoch_steps;
      }
    } catch (const TrainingError&) {
      params = snapshot;  // retain the last completed epoch
      ctx.opt->velocity = snapshot_velocity;
      throw;
    }
    const double epoch_loss = epoch_sum / epoch_steps;
    result.epoch_losses.push_back(epoch_loss);
    if (tracker.observe(epoch_loss)) {
      ctx.opt->lr_backbone /= 10.0;
      ctx.opt->lr_branches /= 10.0;
    }
    snapshot = params;
    snapshot_velocity = ctx.opt->velocity;
  }
  return result;
}

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const OptimizerState& opt) {
  WeightContainer c = params_to_container(params);
  for (int pi = 0; pi < kNumPartitions; ++pi) {
    const auto part = static_cast<Partition>(pi);
    append_param_set(c, std::string("opt/velocity/") + partition_name(part),
                     opt.velocity.partition(part));
  }
  WeightEntry scalars;
  scalars.name = "opt/scalars";
  scalars.shape = {4};
  scalars.data = {static_cast<float>(opt.lr_backbone),
                  static_cast<float>(opt.lr_branches),
                  static_cast<float>(opt.momentum),
                  static_cast<float>(opt.weight_decay)};
  c.entries.push_back(std::move(scalars));
  write_container(path, c);
}

ModelParams load_checkpoint(const std::string& path, OptimizerState* opt) {
  ModelParams params = load_params(path);
  if (opt) {
    WeightContainer c = read_container(path);
    opt->velocity = zeros_like(params);
    for (int pi = 0; pi < kNumPartitions; ++pi) {
      const auto part = static_cast<Partition>(pi);
      read_param_set(c, std::string("opt/velocity/") + partition_name(part),
                     opt->velocity.partition(part));
    }
    const WeightEntry* scalars = c.find("opt/scalars");
    if (!scalars || scalars->data.size() != 4)
      throw IoError("checkpoint has no optimizer scalars: " + path);
    opt->lr_backbone = scalars->data[0];
    opt->lr_branches = scalars->data[1];
    opt->momentum = scalars->data[2];
    opt->weight_decay = scalars->data[3];
  }
  return params;
}

TrainResult run_plan(const ArchConfig& arch, const TrainPlan& plan,
                     const LoadedDataset& data, const std::string& out_dir) {
  arch.validate();
  const auto stages = plan_stages(plan);
  if (data.split.train_videos.empty() || data.split.test_videos.empty())
    throw ConfigError("run_plan: split must have train and test videos");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir + ": " + ec.message());

  TrainResult result;
  result.params = init_parameters(arch, plan.seed);
  OptimizerState opt = OptimizerState::create(
      result.params, plan.lr_backbone, plan.lr_branches, plan.momentum,
      2.0 * plan.lambdas.l3);

  const std::string csv_path = (fs::path(out_dir) / "steps.csv").string();
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw IoError("cannot open for writing: " + csv_path);
  csv << losses::csv_header() << '\n';

  const Rng base_rng(splitmix64(plan.seed ^ 0x747261696e313fULL));
  TrainContext ctx;
  ctx.data = &data;
  ctx.plan = &plan;
  ctx.opt = &opt;
  ctx.log = &csv;

  nlohmann::json stage_meta = nlohmann::json::array();
  for (size_t k = 0; k < stages.size(); ++k) {
    ctx.rng = base_rng.fork(k);
    StageResult sr = train_stage(result.params, stages[k], ctx);

    const std::string ckpt =
        (fs::path(out_dir) / ("stage" + std::to_string(k + 1) + ".ckpt"))
            .string();
    save_checkpoint(ckpt, result.params, opt);
    result.checkpoints.push_back(ckpt);
    stage_meta.push_back({{"name", stages[k].name},
                          {"epochs", stages[k].epochs},
                          {"checkpoint", ckpt},
                          {"epoch_losses", sr.epoch_losses},
                          {"trainable",
                           {{"backbone", stages[k].trainable.backbone},
                            {"tool_head", stages[k].trainable.tool_head},
                            {"phase_head", stages[k].trainable.phase_head},
                            {"mapping_cell", stages[k].trainable.mapping_cell}}},
                          {"losses",
                           {{"tool", stages[k].losses.tool},
                            {"phase", stages[k].losses.phase},
                            {"corr", stages[k].losses.corr},
                            {"mapped_tool", stages[k].losses.mapped_tool}}}});
  }
  csv.close();
  result.steps_csv = csv_path;

  nlohmann::json manifest{
      {"kind", "mtrc-run"},
      {"command", "train"},
      {"arch", arch_config_to_json(arch)},
      {"plan", train_plan_to_json(plan)},
      {"stages", stage_meta},
      {"steps_csv", csv_path},
      {"final_checkpoint", result.checkpoints.back()},
  };
  manifest["config_hash"] =
      to_hex(fnv1a64(manifest["arch"].dump() + manifest["plan"].dump()));
  const std::string manifest_path =
      (fs::path(out_dir) / "manifest.json").string();
  std::ofstream mf(manifest_path, std::ios::trunc);
  if (!mf) throw IoError("cannot open for writing: " + manifest_path);
  mf << manifest.dump(2) << '\n';
  result.manifest = manifest_path;
  return result;
}

}  // namespace mtrc
