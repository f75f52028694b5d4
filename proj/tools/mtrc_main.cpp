// mtrc: generate synthetic surgical-workflow datasets, train the two-branch
// recurrent model, run online prediction, and emit evaluation reports.
//
// Exit codes: 0 success, 2 configuration error, 3 I/O error,
// 4 data-alignment error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "mtrc/image.hpp"
#include "mtrc/losses.hpp"
#include "mtrc/predict.hpp"
#include "mtrc/report.hpp"
#include "mtrc/serialize.hpp"
#include "mtrc/synth.hpp"
#include "mtrc/training.hpp"
#include "mtrc/weights_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitAlignment = 4;

json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw mtrc::IoError("cannot open: " + path);
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw mtrc::ParseError(path + ": " + e.what());
  }
  return j;
}

void write_manifest(const std::string& dir, const std::string& command,
                    json config) {
  json manifest{{"kind", "mtrc-manifest"}, {"command", command}};
  manifest["config"] = config;
  manifest["config_hash"] = mtrc::to_hex(mtrc::fnv1a64(config.dump()));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw mtrc::IoError("cannot create directory " + dir + ": " + ec.message());
  const std::string path = (fs::path(dir) / "manifest.json").string();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw mtrc::IoError("cannot open for writing: " + path);
  os << manifest.dump(2) << '\n';
}

struct GenDataArgs {
  std::string out;
  std::string workflow_file;
  int num_videos = 20;
  uint64_t seed = 0;
  int phase_fps = 1;
  double noise_level = -1.0;     // <0: keep spec value
  double train_ratio = -1.0;
};

int cmd_gen_data(const GenDataArgs& a) {
  mtrc::WorkflowSpec spec = mtrc::WorkflowSpec::defaults();
  if (!a.workflow_file.empty())
    spec = mtrc::workflow_spec_from_json(load_json_file(a.workflow_file));
  if (a.noise_level >= 0.0) spec.noise_level = a.noise_level;
  if (a.train_ratio > 0.0) spec.train_ratio = a.train_ratio;
  spec.validate();

  mtrc::DatasetSplit split =
      mtrc::generate_dataset(spec, a.num_videos, a.out, a.seed, a.phase_fps);
  write_manifest(a.out, "gen-data",
                 json{{"workflow", mtrc::workflow_spec_to_json(spec)},
                      {"num_videos", a.num_videos},
                      {"seed", a.seed},
                      {"phase_fps", a.phase_fps},
                      {"out", a.out}});
  std::cout << "wrote " << a.num_videos << " videos to " << a.out << " ("
            << split.train_videos.size() << " train, "
            << split.test_videos.size() << " test)\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string arch_file;
  std::string plan_file;
  std::string strategy;
  int clip_len = 0;
  int64_t seed = -1;
  bool deterministic = false;
  int threads = 0;
  std::vector<int> epochs;
};

int cmd_train(const TrainArgs& a) {
  mtrc::LoadedDataset data = mtrc::load_dataset(a.data);

  mtrc::ArchConfig arch;
  if (!a.arch_file.empty())
    arch = mtrc::arch_config_from_json(load_json_file(a.arch_file));
  arch.channels = data.spec.channels;
  if (arch.frame_size > data.spec.frame_size)
    throw mtrc::ConfigError("model frame_size exceeds dataset frame size");

  mtrc::TrainPlan plan;
  if (!a.plan_file.empty())
    plan = mtrc::train_plan_from_json(load_json_file(a.plan_file));
  if (!a.strategy.empty()) plan.strategy = mtrc::strategy_from_string(a.strategy);
  if (a.clip_len > 0) plan.clip_len = a.clip_len;
  if (a.seed >= 0) plan.seed = static_cast<uint64_t>(a.seed);
  if (a.threads > 0) plan.threads = a.threads;
  if (a.deterministic) plan.deterministic = true;
  if (!a.epochs.empty()) {
    if (a.epochs.size() != 3)
      throw mtrc::ConfigError("--epochs needs exactly 3 values");
    plan.stage_epochs = a.epochs;
  }
  arch.clip_len = plan.clip_len;
  arch.validate();

  mtrc::TrainResult result = mtrc::run_plan(arch, plan, data, a.out);
  std::cout << "strategy " << mtrc::strategy_name(plan.strategy) << ": "
            << result.checkpoints.size() << " stage checkpoint(s) in " << a.out
            << '\n';
  return kExitOk;
}

struct PredictArgs {
  std::string data;
  std::string checkpoint;
  std::string out;
};

int cmd_predict(const PredictArgs& a) {
  mtrc::LoadedDataset data = mtrc::load_dataset(a.data);
  mtrc::ModelParams params = mtrc::load_checkpoint(a.checkpoint, nullptr);
  auto records =
      mtrc::predict_videos(params, data, data.split.test_videos);
  mtrc::write_predictions_csv(a.out, records, params.config.num_phases,
                              params.config.num_tools);
  const fs::path manifest_dir = fs::path(a.out).parent_path();
  write_manifest(manifest_dir.empty() ? "." : manifest_dir.string(), "predict",
                 json{{"data", a.data},
                      {"checkpoint", a.checkpoint},
                      {"out", a.out},
                      {"arch", mtrc::arch_config_to_json(params.config)}});
  std::cout << "wrote " << records.size() << " prediction rows to " << a.out
            << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string data;
  std::string predictions;
  std::string out;
  bool pooled = false;
  bool images = true;
};

int cmd_eval(const EvalArgs& a) {
  mtrc::LoadedDataset data = mtrc::load_dataset(a.data);
  auto preds = mtrc::read_predictions_csv(a.predictions, data.spec.num_phases,
                                          data.spec.num_tools);
  mtrc::EvalReport rep = mtrc::evaluate_run(preds, data, a.pooled);
  mtrc::write_eval_report(a.out, rep);

  if (a.images) {
    const int t1 = data.spec.num_tools + 1;
    mtrc::write_ppm((fs::path(a.out) / "confusion.ppm").string(),
                    mtrc::heatmap_image(rep.confusion, rep.num_phases,
                                        rep.num_phases));
    mtrc::write_ppm((fs::path(a.out) / "cooccurrence_gt.ppm").string(),
                    mtrc::heatmap_image(rep.cooccurrence_gt, t1, rep.num_phases));
    mtrc::write_ppm(
        (fs::path(a.out) / "cooccurrence_pred.ppm").string(),
        mtrc::heatmap_image(rep.cooccurrence_pred, t1, rep.num_phases));
    mtrc::write_ppm(
        (fs::path(a.out) / "cooccurrence_diff.ppm").string(),
        mtrc::heatmap_image(rep.cooccurrence_diff, t1, rep.num_phases));

    // per-video label ribbons, predicted vs ground truth
    std::map<std::string, std::vector<const mtrc::PredictionRecord*>> by_video;
    for (const auto& r : preds) by_video[r.video_id].push_back(&r);
    for (auto& [id, rows] : by_video) {
      std::sort(rows.begin(), rows.end(),
                [](const auto* x, const auto* y) {
                  return x->frame_idx < y->frame_idx;
                });
      const mtrc::VideoRecord& v = data.video(id);
      std::vector<int> pred_phase;
      std::vector<uint8_t> pred_tools;
      for (const auto* r : rows) {
        pred_phase.push_back(r->phase_pred);
        for (int c = 0; c < data.spec.num_tools; ++c)
          pred_tools.push_back(r->tool_probs[c] >= 0.5 ? 1 : 0);
      }
      const std::string base = (fs::path(a.out) / id).string();
      mtrc::write_ppm(base + "-phase-pred.ppm",
                      mtrc::phase_ribbon(pred_phase, data.spec.num_phases));
      mtrc::write_ppm(base + "-phase-gt.ppm",
                      mtrc::phase_ribbon(v.phase_labels, data.spec.num_phases));
      mtrc::write_ppm(base + "-tool-pred.ppm",
                      mtrc::tool_ribbon(pred_tools, v.length,
                                        data.spec.num_tools));
      mtrc::write_ppm(base + "-tool-gt.ppm",
                      mtrc::tool_ribbon(v.tool_labels, v.length,
                                        data.spec.num_tools));
    }
  }

  write_manifest(a.out, "eval",
                 json{{"data", a.data},
                      {"predictions", a.predictions},
                      {"out", a.out},
                      {"pooled", a.pooled},
                      {"images", a.images}});
  std::cout << "accuracy " << rep.mean_accuracy << " +- " << rep.std_accuracy
            << ", precision " << rep.mean_precision << ", recall "
            << rep.mean_recall << ", F1 " << rep.f1 << ", mAP " << rep.map
            << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "joint surgical tool-presence detection and phase recognition on "
      "synthetic workflow data"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key-value config file (INI/TOML style)");

  GenDataArgs gen;
  auto* cmd_gen = app.add_subcommand("gen-data",
                                     "generate a synthetic dataset with "
                                     "Cholec80-style annotation files");
  cmd_gen->add_option("--out", gen.out, "output dataset directory")->required();
  cmd_gen->add_option("--workflow", gen.workflow_file,
                      "workflow spec JSON file (defaults built in)");
  cmd_gen->add_option("--num-videos", gen.num_videos, "number of videos");
  cmd_gen->add_option("--seed", gen.seed, "generator seed");
  cmd_gen->add_option("--phase-fps", gen.phase_fps,
                      "phase annotation rows per frame");
  cmd_gen->add_option("--noise-level", gen.noise_level,
                      "override the workflow pixel noise level");
  cmd_gen->add_option("--train-ratio", gen.train_ratio,
                      "override the train split ratio");

  TrainArgs train;
  auto* cmd_tr = app.add_subcommand("train", "train a model on a dataset");
  cmd_tr->add_option("--data", train.data, "dataset directory")->required();
  cmd_tr->add_option("--out", train.out, "run output directory")->required();
  cmd_tr->add_option("--arch", train.arch_file, "architecture JSON file");
  cmd_tr->add_option("--plan", train.plan_file, "training plan JSON file");
  cmd_tr->add_option(
      "--strategy", train.strategy,
      "three_step | TS1 | TS2 | single_tool | single_phase | mtrcnet_no_cl");
  cmd_tr->add_option("--clip-len", train.clip_len, "frames per training clip");
  cmd_tr->add_option("--seed", train.seed, "training seed");
  cmd_tr->add_option("--threads", train.threads, "batch evaluation threads");
  cmd_tr->add_option("--epochs", train.epochs,
                     "three per-stage epoch counts")->expected(3);
  cmd_tr->add_flag("--deterministic", train.deterministic,
                   "force single-threaded execution");

  PredictArgs pred;
  auto* cmd_pr = app.add_subcommand(
      "predict", "stream the test split causally and write predictions");
  cmd_pr->add_option("--data", pred.data, "dataset directory")->required();
  cmd_pr->add_option("--checkpoint", pred.checkpoint, "checkpoint file")
      ->required();
  cmd_pr->add_option("--out", pred.out, "predictions CSV path")->required();

  EvalArgs ev;
  auto* cmd_ev = app.add_subcommand(
      "eval", "score predictions and emit report files and images");
  cmd_ev->add_option("--data", ev.data, "dataset directory")->required();
  cmd_ev->add_option("--predictions", ev.predictions, "predictions CSV")
      ->required();
  cmd_ev->add_option("--out", ev.out, "report output directory")->required();
  cmd_ev->add_flag("--pooled", ev.pooled,
                   "pool frames across videos for PR/RE instead of per-video "
                   "means");
  cmd_ev->add_flag("!--no-images", ev.images, "skip PPM image emission");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (app.got_subcommand(cmd_gen)) return cmd_gen_data(gen);
    if (app.got_subcommand(cmd_tr)) return cmd_train(train);
    if (app.got_subcommand(cmd_pr)) return cmd_predict(pred);
    if (app.got_subcommand(cmd_ev)) return cmd_eval(ev);
  } catch (const mtrc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const mtrc::AlignmentError& e) {
    std::cerr << "alignment error: " << e.what() << '\n';
    return kExitAlignment;
  } catch (const mtrc::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const mtrc::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitConfig;
}
