#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtrc/losses.hpp"
#include "mtrc/training.hpp"
#include "mtrc/weights_io.hpp"
#include "test_util.hpp"

using namespace mtrc;
namespace fs = std::filesystem;

namespace {

ArchConfig tiny_arch() {
  ArchConfig cfg;
  cfg.frame_size = 16;
  cfg.channels = 3;
  cfg.encoder = {{4, 2, false}, {8, 2, false}};
  cfg.feature_dim = 8;
  cfg.phase_feature_dim = 6;
  cfg.clip_len = 4;
  return cfg;
}

WorkflowSpec tiny_spec() {
  WorkflowSpec spec = WorkflowSpec::defaults();
  spec.frame_size = 16;
  spec.duration_range.assign(7, {6, 9});
  spec.noise_level = 0.05;
  return spec;
}

TrainPlan tiny_plan() {
  TrainPlan plan;
  plan.stage_epochs = {2, 1, 2};
  plan.clip_len = 4;
  plan.batch_size = 4;
  plan.seed = 5;
  plan.deterministic = true;
  return plan;
}

fs::path temp_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

LoadedDataset make_dataset(const char* name, int videos = 4) {
  const fs::path dir = temp_dir(name);
  generate_dataset(tiny_spec(), videos, dir.string(), 99);
  return load_dataset(dir.string());
}

// single-scalar-per-partition model for optimizer unit tests
ModelParams scalar_params(double w) {
  ModelParams p;
  for (int pi = 0; pi < kNumPartitions; ++pi) {
    auto& set = p.partition(static_cast<Partition>(pi));
    set.add("w", {1});
    set.at("w")[0] = w;
  }
  return p;
}

bool set_equal(const ParamSet& a, const ParamSet& b) {
  if (a.items.size() != b.items.size()) return false;
  for (size_t i = 0; i < a.items.size(); ++i)
    if (std::memcmp(a.items[i].tensor.data(), b.items[i].tensor.data(),
                    sizeof(double) * a.items[i].tensor.size()) != 0)
      return false;
  return true;
}

}  // namespace

TEST_SUITE_BEGIN("training");

TEST_CASE("sgd_step: fixed point, hand-computed step, freezing") {
  ModelParams p = scalar_params(1.0);
  Grads g = zeros_like(p);
  OptimizerState opt = OptimizerState::create(p, 0.1, 0.1, 0.9, 0.0);
  sgd_step(p, g, opt, PartitionMask::all());
  for (int pi = 0; pi < kNumPartitions; ++pi)
    CHECK(p.partition(static_cast<Partition>(pi)).at("w")[0] == 1.0);

  // w=1, grad=1, momentum=0, decay=0, lr=0.1 -> w=0.9
  ModelParams p2 = scalar_params(1.0);
  Grads g2 = zeros_like(p2);
  for (int pi = 0; pi < kNumPartitions; ++pi)
    g2.partition(static_cast<Partition>(pi)).at("w")[0] = 1.0;
  OptimizerState opt2 = OptimizerState::create(p2, 0.1, 0.1, 0.0, 0.0);
  sgd_step(p2, g2, opt2, PartitionMask::all());
  for (int pi = 0; pi < kNumPartitions; ++pi)
    CHECK(p2.partition(static_cast<Partition>(pi)).at("w")[0] ==
          doctest::Approx(0.9).epsilon(1e-15));

  // frozen mapping cell is bitwise untouched
  ModelParams p3 = scalar_params(0.5);
  Grads g3 = zeros_like(p3);
  for (int pi = 0; pi < kNumPartitions; ++pi)
    g3.partition(static_cast<Partition>(pi)).at("w")[0] = 2.0;
  OptimizerState opt3 = OptimizerState::create(p3, 0.1, 0.1, 0.9, 1e-3);
  PartitionMask mask = PartitionMask::all();
  mask.mapping_cell = false;
  sgd_step(p3, g3, opt3, mask);
  CHECK(p3.mapping_cell.at("w")[0] == 0.5);
  CHECK(opt3.velocity.mapping_cell.at("w")[0] == 0.0);
  CHECK(p3.tool_head.at("w")[0] != 0.5);

  // non-finite gradient names the partition
  Grads g4 = zeros_like(p3);
  g4.phase_head.at("w")[0] = std::nan("");
  try {
    sgd_step(p3, g4, opt3, PartitionMask::all());
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("phase_head") != std::string::npos);
  }
}

TEST_CASE("sgd_step: velocity follows the momentum recurrence") {
  ModelParams p = scalar_params(1.0);
  OptimizerState opt = OptimizerState::create(p, 0.1, 0.1, 0.5, 0.2);
  Grads g = zeros_like(p);
  g.tool_head.at("w")[0] = 1.0;
  PartitionMask only_tool = PartitionMask::none();
  only_tool.tool_head = true;

  // v = 0.5*0 + 1 + 0.2*1 = 1.2 ; w = 1 - 0.1*1.2 = 0.88
  sgd_step(p, g, opt, only_tool);
  CHECK(p.tool_head.at("w")[0] == doctest::Approx(0.88).epsilon(1e-15));
  // v = 0.5*1.2 + 1 + 0.2*0.88 = 1.776 ; w = 0.88 - 0.1776 = 0.7024
  sgd_step(p, g, opt, only_tool);
  CHECK(p.tool_head.at("w")[0] == doctest::Approx(0.7024).epsilon(1e-12));
}

TEST_CASE("lr_on_plateau: trigger, no-trigger and counter reset") {
  ModelParams p = scalar_params(1.0);
  OptimizerState opt = OptimizerState::create(p, 1e-3, 1e-2, 0.9, 0.0);
  PlateauConfig cfg;  // patience 3, min_delta 1e-3

  // strictly decreasing -> unchanged
  OptimizerState a = lr_on_plateau({1.0, 0.9, 0.8, 0.7, 0.6}, opt, cfg);
  CHECK(a.lr_branches == opt.lr_branches);

  // flat history of length patience+1 -> divided exactly once
  OptimizerState b = lr_on_plateau({0.5, 0.5, 0.5, 0.5}, opt, cfg);
  CHECK(b.lr_branches == doctest::Approx(opt.lr_branches / 10.0));
  CHECK(b.lr_backbone == doctest::Approx(opt.lr_backbone / 10.0));

  // improvement resets the patience counter
  OptimizerState c =
      lr_on_plateau({0.5, 0.5, 0.5, 0.3, 0.3, 0.3}, opt, cfg);
  CHECK(c.lr_branches == doctest::Approx(opt.lr_branches));

  // two plateau events -> divided twice
  OptimizerState d = lr_on_plateau(
      {0.5, 0.5, 0.5, 0.5, 0.2, 0.2, 0.2, 0.2}, opt, cfg);
  CHECK(d.lr_branches == doctest::Approx(opt.lr_branches / 100.0));

  CHECK_THROWS_AS(lr_on_plateau({}, opt, cfg), ConfigError);
  CHECK_THROWS_AS(OptimizerState::create(p, 0.0, 0.1, 0.9, 0.0), ConfigError);
}

TEST_CASE("plan_stages: strategy definitions") {
  TrainPlan plan = tiny_plan();
  plan.strategy = Strategy::three_step;
  auto stages = plan_stages(plan);
  REQUIRE(stages.size() == 3);
  CHECK_FALSE(stages[0].trainable.mapping_cell);
  CHECK(stages[0].losses.tool);
  CHECK(stages[0].losses.phase);
  CHECK_FALSE(stages[0].losses.corr);
  CHECK(stages[1].trainable.mapping_cell);
  CHECK_FALSE(stages[1].trainable.backbone);
  CHECK(stages[1].losses.mapped_tool);
  CHECK(stages[2].trainable.backbone);
  CHECK(stages[2].trainable.mapping_cell);
  CHECK(stages[2].losses.corr);

  plan.strategy = Strategy::ts2;
  auto ts2 = plan_stages(plan);
  REQUIRE(ts2.size() == 3);
  CHECK_FALSE(ts2[2].trainable.mapping_cell);
  CHECK(ts2[2].losses.corr);

  plan.strategy = Strategy::single_phase;
  auto sp = plan_stages(plan);
  REQUIRE(sp.size() == 1);
  CHECK_FALSE(sp[0].trainable.tool_head);
  CHECK_FALSE(sp[0].losses.tool);
  CHECK(sp[0].epochs == plan.stage_epochs[0] + plan.stage_epochs[2]);

  CHECK_THROWS_AS(strategy_from_string("warp_speed"), ConfigError);
}

TEST_CASE("train_stage: step-2 changes only the mapping cell") {
  LoadedDataset data = make_dataset("mtrc_train_ds1");
  const ArchConfig arch = tiny_arch();
  TrainPlan plan = tiny_plan();
  ModelParams params = init_parameters(arch, 3);
  ModelParams before = params;
  OptimizerState opt =
      OptimizerState::create(params, plan.lr_backbone, plan.lr_branches,
                             plan.momentum, 2.0 * plan.lambdas.l3);
  TrainContext ctx;
  ctx.data = &data;
  ctx.plan = &plan;
  ctx.opt = &opt;
  ctx.rng = Rng(17);

  const auto stages = plan_stages(plan);
  train_stage(params, stages[1], ctx);  // the mapping-only stage

  CHECK(set_equal(params.backbone, before.backbone));
  CHECK(set_equal(params.tool_head, before.tool_head));
  CHECK(set_equal(params.phase_head, before.phase_head));
  CHECK_FALSE(set_equal(params.mapping_cell, before.mapping_cell));
}

TEST_CASE("train_stage: mapped-prior tool loss decreases in step-2") {
  LoadedDataset data = make_dataset("mtrc_train_ds2");
  const ArchConfig arch = tiny_arch();
  TrainPlan plan = tiny_plan();
  plan.stage_epochs = {1, 4, 1};
  ModelParams params = init_parameters(arch, 3);
  OptimizerState opt =
      OptimizerState::create(params, plan.lr_backbone, plan.lr_branches,
                             plan.momentum, 2.0 * plan.lambdas.l3);
  TrainContext ctx;
  ctx.data = &data;
  ctx.plan = &plan;
  ctx.opt = &opt;
  ctx.rng = Rng(19);

  const auto stages = plan_stages(plan);
  StageResult sr = train_stage(params, stages[1], ctx);
  REQUIRE(sr.epoch_losses.size() == 4);
  CHECK(sr.epoch_losses.back() < sr.epoch_losses.front());
  // in the mapping stage the logged tool column is the mapped-prior loss
  CHECK(sr.steps.front().active.mapped_tool);
}

TEST_CASE("train_stage: loss gating matches a zero lambda") {
  LoadedDataset data = make_dataset("mtrc_train_ds3");
  const ArchConfig arch = tiny_arch();

  auto run_once = [&](bool corr_active, double l2) {
    TrainPlan plan = tiny_plan();
    plan.stage_epochs = {1, 1, 1};
    plan.lambdas.l2 = l2;
    ModelParams params = init_parameters(arch, 7);
    OptimizerState opt =
        OptimizerState::create(params, plan.lr_backbone, plan.lr_branches,
                               plan.momentum, 2.0 * plan.lambdas.l3);
    TrainContext ctx;
    ctx.data = &data;
    ctx.plan = &plan;
    ctx.opt = &opt;
    ctx.rng = Rng(23);
    StageConfig stage{"probe", 1, PartitionMask::all(), ActiveLosses{}};
    stage.losses.corr = corr_active;
    train_stage(params, stage, ctx);
    return params;
  };

  ModelParams gated = run_once(false, 0.5);
  ModelParams zeroed = run_once(true, 0.0);
  for (int pi = 0; pi < kNumPartitions; ++pi) {
    const auto part = static_cast<Partition>(pi);
    CHECK(set_equal(gated.partition(part), zeroed.partition(part)));
  }
}

TEST_CASE("train_stage: identical seeds give identical loss logs") {
  LoadedDataset data = make_dataset("mtrc_train_ds4");
  const ArchConfig arch = tiny_arch();
  auto run_once = [&]() {
    TrainPlan plan = tiny_plan();
    ModelParams params = init_parameters(arch, 11);
    OptimizerState opt =
        OptimizerState::create(params, plan.lr_backbone, plan.lr_branches,
                               plan.momentum, 2.0 * plan.lambdas.l3);
    TrainContext ctx;
    ctx.data = &data;
    ctx.plan = &plan;
    ctx.opt = &opt;
    ctx.rng = Rng(29);
    std::ostringstream log;
    ctx.log = &log;
    StageConfig stage{"joint", 2, PartitionMask::all(), ActiveLosses{}};
    train_stage(params, stage, ctx);
    return log.str();
  };
  CHECK(run_once() == run_once());
}

TEST_CASE("descent sanity: full-batch loss is non-increasing at small lr") {
  const ArchConfig arch = testutil::toy_config();
  ModelParams params = init_parameters(arch, 13);
  ClipBatch batch = testutil::random_clip_batch(arch, 4, 3, 31);
  Lambdas lambdas;
  OptimizerState opt =
      OptimizerState::create(params, 2e-4, 2e-4, 0.9, 2.0 * lambdas.l3);

  double prev = 1e300;
  for (int step = 0; step < 50; ++step) {
    Grads grads = zeros_like(params);
    BatchEval ev = evaluate_batch(batch, params, lambdas, ActiveLosses{},
                                  PartitionMask::all(), &grads);
    CHECK(ev.breakdown.total <= prev + 1e-12);
    prev = ev.breakdown.total;
    sgd_step(params, grads, opt, PartitionMask::all());
  }
}

TEST_CASE("run_plan: checkpoints, freeze contracts, single-task gradients") {
  LoadedDataset data = make_dataset("mtrc_train_ds5");
  const ArchConfig arch = tiny_arch();
  const fs::path out = temp_dir("mtrc_run_three_step");

  TrainPlan plan = tiny_plan();
  plan.strategy = Strategy::three_step;
  TrainResult tr = run_plan(arch, plan, data, out.string());
  REQUIRE(tr.checkpoints.size() == 3);
  for (const auto& p : tr.checkpoints) CHECK(fs::exists(p));
  CHECK(fs::exists(tr.manifest));
  CHECK(fs::exists(tr.steps_csv));

  // step-2 of three_step changes only the mapping cell (checkpoint diff)
  ModelParams s1 = load_checkpoint(tr.checkpoints[0], nullptr);
  ModelParams s2 = load_checkpoint(tr.checkpoints[1], nullptr);
  CHECK(set_equal(s1.backbone, s2.backbone));
  CHECK(set_equal(s1.tool_head, s2.tool_head));
  CHECK(set_equal(s1.phase_head, s2.phase_head));
  CHECK_FALSE(set_equal(s1.mapping_cell, s2.mapping_cell));

  // TS2: the final stage leaves the mapping cell bitwise unchanged
  const fs::path out2 = temp_dir("mtrc_run_ts2");
  TrainPlan ts2 = tiny_plan();
  ts2.strategy = Strategy::ts2;
  TrainResult tr2 = run_plan(arch, ts2, data, out2.string());
  REQUIRE(tr2.checkpoints.size() == 3);
  ModelParams t2 = load_checkpoint(tr2.checkpoints[1], nullptr);
  ModelParams t3 = load_checkpoint(tr2.checkpoints[2], nullptr);
  CHECK(set_equal(t2.mapping_cell, t3.mapping_cell));
  CHECK_FALSE(set_equal(t2.backbone, t3.backbone));

  // single_phase: the tool head never receives gradient
  const fs::path out3 = temp_dir("mtrc_run_sp");
  TrainPlan sp = tiny_plan();
  sp.strategy = Strategy::single_phase;
  TrainResult tr3 = run_plan(arch, sp, data, out3.string());
  REQUIRE(tr3.checkpoints.size() == 1);
  ModelParams init = init_parameters(arch, sp.seed);
  ModelParams fin = load_checkpoint(tr3.checkpoints[0], nullptr);
  ParamSet init_tool;  // float-truncated copy for a fair bitwise compare
  for (const auto& it : init.tool_head.items) {
    auto& t = init_tool.add(it.name, it.tensor.shape());
    for (int64_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<double>(static_cast<float>(it.tensor[i]));
  }
  CHECK(set_equal(init_tool, fin.tool_head));
  CHECK_FALSE(set_equal(init.phase_head, fin.phase_head));

  fs::remove_all(out);
  fs::remove_all(out2);
  fs::remove_all(out3);
}

TEST_CASE("checkpoints restore optimizer state") {
  LoadedDataset data = make_dataset("mtrc_train_ds6");
  const ArchConfig arch = tiny_arch();
  ModelParams params = init_parameters(arch, 41);
  OptimizerState opt = OptimizerState::create(params, 1e-3, 2e-3, 0.9, 1e-3);
  opt.velocity.tool_head.at("W")[0] = 0.125;
  const std::string path =
      (fs::temp_directory_path() / "mtrc_ckpt_test.ckpt").string();
  save_checkpoint(path, params, opt);

  OptimizerState back;
  ModelParams loaded = load_checkpoint(path, &back);
  CHECK(back.lr_backbone == doctest::Approx(1e-3));
  CHECK(back.lr_branches == doctest::Approx(2e-3));
  CHECK(back.momentum == doctest::Approx(0.9));
  CHECK(back.velocity.tool_head.at("W")[0] == doctest::Approx(0.125));
  CHECK(loaded.config.feature_dim == arch.feature_dim);
  fs::remove(path);
}

TEST_SUITE_END();
