#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "mtrc/losses.hpp"
#include "mtrc/metrics.hpp"
#include "mtrc/model.hpp"
#include "mtrc/predict.hpp"
#include "mtrc/report.hpp"
#include "mtrc/serialize.hpp"
#include "mtrc/synth.hpp"
#include "mtrc/training.hpp"
#include "mtrc/weights_io.hpp"

namespace py = pybind11;
using namespace mtrc;
using nlohmann::json;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;
using IArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vec(const DArray& a) {
  return {a.data(), a.data() + a.size()};
}

template <typename T>
py::array_t<T> make_array(const std::vector<T>& v, std::vector<py::ssize_t> shape) {
  py::array_t<T> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

ClipBatch batch_from_numpy(const DArray& frames, const ArchConfig& cfg) {
  if (frames.ndim() != 5)
    throw DimensionError("frames must have shape (batch, n_f, C, H, W)");
  ClipBatch clip;
  clip.batch = static_cast<int>(frames.shape(0));
  clip.n_f = static_cast<int>(frames.shape(1));
  clip.channels = static_cast<int>(frames.shape(2));
  clip.height = static_cast<int>(frames.shape(3));
  clip.width = static_cast<int>(frames.shape(4));
  clip.frames.assign(frames.data(), frames.data() + frames.size());
  const int64_t fn = static_cast<int64_t>(clip.batch) * clip.n_f;
  clip.tool_labels.assign(fn * cfg.num_tools, 0);
  clip.phase_labels.assign(fn, 0);
  for (int b = 0; b < clip.batch; ++b) {
    clip.video_ids.push_back("clip" + std::to_string(b));
    clip.start_frames.push_back(0);
  }
  return clip;
}

json report_to_dict_json(const EvalReport& rep) {
  json j = eval_report_to_json(rep);
  j["confusion"] = rep.confusion;
  j["cooccurrence_gt"] = rep.cooccurrence_gt;
  j["cooccurrence_pred"] = rep.cooccurrence_pred;
  j["cooccurrence_diff"] = rep.cooccurrence_diff;
  return j;
}

py::object json_to_py(const json& j) {
  py::module_ pyjson = py::module_::import("json");
  return pyjson.attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "joint tool-presence detection and phase recognition: model, losses, "
      "synthetic data, training and evaluation";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<DimensionError>(m, "DimensionError");
  py::register_exception<ParseError>(m, "ParseFileError");
  py::register_exception<IoError>(m, "IoError");
  py::register_exception<AlignmentError>(m, "AlignmentError");

  py::enum_<MappingSource>(m, "MappingSource")
      .value("phase_features", MappingSource::phase_features)
      .value("phase_labels", MappingSource::phase_labels);

  py::enum_<Activation>(m, "Activation")
      .value("tanh", Activation::tanh)
      .value("relu", Activation::relu);

  py::class_<ConvStage>(m, "ConvStage")
      .def(py::init<int, int, bool>(), py::arg("out_channels"),
           py::arg("stride") = 1, py::arg("residual") = false)
      .def_readwrite("out_channels", &ConvStage::out_channels)
      .def_readwrite("stride", &ConvStage::stride)
      .def_readwrite("residual", &ConvStage::residual);

  py::class_<ArchConfig>(m, "ArchConfig")
      .def(py::init<>())
      .def_readwrite("frame_size", &ArchConfig::frame_size)
      .def_readwrite("channels", &ArchConfig::channels)
      .def_readwrite("feature_dim", &ArchConfig::feature_dim)
      .def_readwrite("phase_feature_dim", &ArchConfig::phase_feature_dim)
      .def_readwrite("num_tools", &ArchConfig::num_tools)
      .def_readwrite("num_phases", &ArchConfig::num_phases)
      .def_readwrite("clip_len", &ArchConfig::clip_len)
      .def_readwrite("encoder", &ArchConfig::encoder)
      .def_readwrite("mapping_source", &ArchConfig::mapping_source)
      .def_readwrite("mutual_mapping", &ArchConfig::mutual_mapping)
      .def_readwrite("activation", &ArchConfig::activation)
      .def("validate", &ArchConfig::validate)
      .def("to_json", [](const ArchConfig& c) {
        return json_to_py(arch_config_to_json(c));
      });

  py::class_<ModelParams>(m, "ModelParams")
      .def_property_readonly("config",
                             [](const ModelParams& p) { return p.config; })
      .def("total_size", &ModelParams::total_size)
      .def("save", [](const ModelParams& p, const std::string& path) {
        save_params(path, p);
      });

  m.def("load_params", &load_params, py::arg("path"));

  m.def(
      "init_parameters",
      [](const ArchConfig& cfg, uint64_t seed) {
        return init_parameters(cfg, seed);
      },
      py::arg("config"), py::arg("seed") = 0);

  m.def(
      "forward",
      [](const ModelParams& params, const DArray& frames) {
        ClipBatch clip = batch_from_numpy(frames, params.config);
        JointPrediction pred = forward(clip, params);
        const py::ssize_t b = pred.batch, n = pred.n_f;
        py::dict out;
        out["tool_probs"] =
            make_array(pred.tool_probs, {b, n, (py::ssize_t)pred.num_tools});
        out["phase_probs"] =
            make_array(pred.phase_probs, {b, n, (py::ssize_t)pred.num_phases});
        out["phase_features"] = make_array(
            pred.phase_features, {b, n, (py::ssize_t)pred.phase_feature_dim});
        out["tool_priors"] =
            make_array(pred.tool_priors, {b, n, (py::ssize_t)pred.num_tools});
        if (!pred.phase_priors.empty())
          out["phase_priors"] = make_array(
              pred.phase_priors, {b, n, (py::ssize_t)pred.num_phases});
        return out;
      },
      py::arg("params"), py::arg("frames"),
      "run the joint forward pass on frames of shape (batch, n_f, C, H, W)");

  // --- losses ---
  m.def(
      "tool_loss",
      [](const DArray& probs, const U8Array& labels) {
        if (probs.ndim() != 3) throw DimensionError("probs must be (B,N,T)");
        std::vector<uint8_t> lab(labels.data(), labels.data() + labels.size());
        return losses::tool_loss(to_vec(probs), lab,
                                 static_cast<int>(probs.shape(0)),
                                 static_cast<int>(probs.shape(1)),
                                 static_cast<int>(probs.shape(2)));
      },
      py::arg("tool_probs"), py::arg("tool_labels"));
  m.def(
      "phase_loss",
      [](const DArray& probs, const IArray& labels) {
        if (probs.ndim() != 3) throw DimensionError("probs must be (B,N,Z)");
        std::vector<int> lab(labels.data(), labels.data() + labels.size());
        return losses::phase_loss(to_vec(probs), lab,
                                  static_cast<int>(probs.shape(0)),
                                  static_cast<int>(probs.shape(1)),
                                  static_cast<int>(probs.shape(2)));
      },
      py::arg("phase_probs"), py::arg("phase_labels"));
  m.def("bernoulli_kl", &losses::bernoulli_kl, py::arg("p"), py::arg("q"));
  m.def(
      "correlation_loss",
      [](const DArray& probs, const DArray& priors) {
        if (probs.ndim() != 3) throw DimensionError("probs must be (B,N,T)");
        return losses::correlation_loss(to_vec(probs), to_vec(priors),
                                        static_cast<int>(probs.shape(0)),
                                        static_cast<int>(probs.shape(1)),
                                        static_cast<int>(probs.shape(2)));
      },
      py::arg("tool_probs"), py::arg("tool_priors"));
  m.def(
      "total_loss",
      [](double tool, double phase, double corr, double decay_sum, double l1,
         double l2, double l3) {
        LossBreakdown b =
            losses::total_loss(tool, phase, corr, decay_sum, {l1, l2, l3});
        py::dict out;
        out["tool_loss"] = b.tool_loss;
        out["phase_loss"] = b.phase_loss;
        out["correlation_loss"] = b.correlation_loss;
        out["weight_decay"] = b.weight_decay;
        out["total"] = b.total;
        return out;
      },
      py::arg("tool_loss"), py::arg("phase_loss"), py::arg("correlation_loss"),
      py::arg("weight_decay_sum"), py::arg("lambda1") = 1.0,
      py::arg("lambda2") = 0.5, py::arg("lambda3") = 5e-4);

  // --- metrics ---
  m.def(
      "phase_pr_re",
      [](const IArray& gt, const IArray& pred, int num_phases) {
        std::vector<int> g(gt.data(), gt.data() + gt.size());
        std::vector<int> p(pred.data(), pred.data() + pred.size());
        const PhasePrRe r = phase_pr_re(g, p, num_phases);
        py::dict out;
        out["precision"] = make_array(r.precision, {(py::ssize_t)num_phases});
        out["recall"] = make_array(r.recall, {(py::ssize_t)num_phases});
        out["mean_precision"] = r.mean_precision;
        out["mean_recall"] = r.mean_recall;
        return out;
      },
      py::arg("gt"), py::arg("pred"), py::arg("num_phases") = 7);
  m.def(
      "video_accuracy",
      [](const IArray& gt, const IArray& pred) {
        std::vector<int> g(gt.data(), gt.data() + gt.size());
        std::vector<int> p(pred.data(), pred.data() + pred.size());
        return video_accuracy(g, p);
      },
      py::arg("gt"), py::arg("pred"));
  m.def(
      "average_precision",
      [](const DArray& scores, const U8Array& labels) {
        std::vector<uint8_t> lab(labels.data(), labels.data() + labels.size());
        return average_precision(to_vec(scores), lab);
      },
      py::arg("scores"), py::arg("labels"));
  m.def("f1_score", &f1_score, py::arg("mean_precision"),
        py::arg("mean_recall"));
  m.def(
      "confusion_matrix",
      [](const IArray& gt, const IArray& pred, int num_phases) {
        std::vector<int> g(gt.data(), gt.data() + gt.size());
        std::vector<int> p(pred.data(), pred.data() + pred.size());
        return make_array(confusion_matrix(g, p, num_phases),
                          {(py::ssize_t)num_phases, (py::ssize_t)num_phases});
      },
      py::arg("gt"), py::arg("pred"), py::arg("num_phases") = 7);
  m.def(
      "cooccurrence_matrix",
      [](const IArray& phases, const U8Array& tools, int num_phases,
         int num_tools) {
        std::vector<int> p(phases.data(), phases.data() + phases.size());
        std::vector<uint8_t> t(tools.data(), tools.data() + tools.size());
        return make_array(
            cooccurrence_matrix(p, t, num_phases, num_tools),
            {(py::ssize_t)(num_tools + 1), (py::ssize_t)num_phases});
      },
      py::arg("phase_labels"), py::arg("tool_labels"), py::arg("num_phases") = 7,
      py::arg("num_tools") = 7);

  // --- synthetic data ---
  py::class_<WorkflowSpec>(m, "WorkflowSpec")
      .def(py::init(&WorkflowSpec::defaults))
      .def_readwrite("num_phases", &WorkflowSpec::num_phases)
      .def_readwrite("num_tools", &WorkflowSpec::num_tools)
      .def_readwrite("frame_size", &WorkflowSpec::frame_size)
      .def_readwrite("channels", &WorkflowSpec::channels)
      .def_readwrite("tool_given_phase", &WorkflowSpec::tool_given_phase)
      .def_readwrite("tool_persistence", &WorkflowSpec::tool_persistence)
      .def_readwrite("noise_level", &WorkflowSpec::noise_level)
      .def_readwrite("illumination_jitter", &WorkflowSpec::illumination_jitter)
      .def_readwrite("background_styles", &WorkflowSpec::background_styles)
      .def_readwrite("train_ratio", &WorkflowSpec::train_ratio)
      .def_property(
          "duration_range",
          [](const WorkflowSpec& s) {
            std::vector<std::pair<int, int>> out;
            for (const auto& d : s.duration_range) out.emplace_back(d[0], d[1]);
            return out;
          },
          [](WorkflowSpec& s, const std::vector<std::pair<int, int>>& v) {
            s.duration_range.clear();
            for (const auto& [lo, hi] : v) s.duration_range.push_back({lo, hi});
          })
      .def("validate", &WorkflowSpec::validate)
      .def("to_json",
           [](const WorkflowSpec& s) { return json_to_py(workflow_spec_to_json(s)); });

  m.def(
      "generate_workflow",
      [](const WorkflowSpec& spec, uint64_t seed) {
        const auto seq = generate_workflow(spec, seed);
        return make_array(seq, {(py::ssize_t)seq.size()});
      },
      py::arg("spec"), py::arg("seed") = 0);
  m.def(
      "sample_tools",
      [](const WorkflowSpec& spec, const IArray& phases, uint64_t seed) {
        std::vector<int> seq(phases.data(), phases.data() + phases.size());
        const auto tools = sample_tools(seq, spec, seed);
        return make_array(tools, {(py::ssize_t)seq.size(),
                                  (py::ssize_t)spec.num_tools});
      },
      py::arg("spec"), py::arg("phase_seq"), py::arg("seed") = 0);
  m.def(
      "render_frame",
      [](const WorkflowSpec& spec, int phase, const U8Array& tools,
         uint64_t seed) {
        if (tools.size() != spec.num_tools)
          throw DimensionError("tools must have num_tools entries");
        std::vector<double> out(static_cast<int64_t>(spec.channels) *
                                spec.frame_size * spec.frame_size);
        render_frame(phase, tools.data(), spec, seed, out.data());
        return make_array(out, {(py::ssize_t)spec.channels,
                                (py::ssize_t)spec.frame_size,
                                (py::ssize_t)spec.frame_size});
      },
      py::arg("spec"), py::arg("phase"), py::arg("tools"), py::arg("seed") = 0);
  m.def(
      "generate_dataset",
      [](const WorkflowSpec& spec, int num_videos, const std::string& out_dir,
         uint64_t seed, int phase_fps) {
        const DatasetSplit split =
            generate_dataset(spec, num_videos, out_dir, seed, phase_fps);
        py::dict out;
        out["train_videos"] = split.train_videos;
        out["test_videos"] = split.test_videos;
        return out;
      },
      py::arg("spec"), py::arg("num_videos"), py::arg("out_dir"),
      py::arg("seed") = 0, py::arg("phase_fps") = 1);

  // --- training / prediction / evaluation on datasets ---
  m.def(
      "train",
      [](const std::string& data_dir, const std::string& out_dir,
         const std::string& strategy, uint64_t seed, int clip_len,
         const py::object& arch_json, const py::object& plan_json) {
        LoadedDataset data = load_dataset(data_dir);
        py::module_ pyjson = py::module_::import("json");
        ArchConfig arch;
        if (!arch_json.is_none())
          arch = arch_config_from_json(json::parse(
              pyjson.attr("dumps")(arch_json).cast<std::string>()));
        arch.channels = data.spec.channels;
        TrainPlan plan;
        if (!plan_json.is_none())
          plan = train_plan_from_json(json::parse(
              pyjson.attr("dumps")(plan_json).cast<std::string>()));
        plan.strategy = strategy_from_string(strategy);
        plan.seed = seed;
        if (clip_len > 0) plan.clip_len = clip_len;
        arch.clip_len = plan.clip_len;
        TrainResult result = run_plan(arch, plan, data, out_dir);
        py::dict out;
        out["checkpoints"] = result.checkpoints;
        out["steps_csv"] = result.steps_csv;
        out["manifest"] = result.manifest;
        return out;
      },
      py::arg("data_dir"), py::arg("out_dir"), py::arg("strategy") = "three_step",
      py::arg("seed") = 0, py::arg("clip_len") = 0,
      py::arg("arch") = py::none(), py::arg("plan") = py::none());

  m.def(
      "predict",
      [](const std::string& data_dir, const std::string& checkpoint,
         const std::string& out_csv) {
        LoadedDataset data = load_dataset(data_dir);
        ModelParams params = load_checkpoint(checkpoint, nullptr);
        auto records = predict_videos(params, data, data.split.test_videos);
        write_predictions_csv(out_csv, records, params.config.num_phases,
                              params.config.num_tools);
        return static_cast<int64_t>(records.size());
      },
      py::arg("data_dir"), py::arg("checkpoint"), py::arg("out_csv"));

  m.def(
      "evaluate",
      [](const std::string& data_dir, const std::string& predictions_csv,
         bool pooled) {
        LoadedDataset data = load_dataset(data_dir);
        auto preds = read_predictions_csv(predictions_csv, data.spec.num_phases,
                                          data.spec.num_tools);
        return json_to_py(report_to_dict_json(evaluate_run(preds, data, pooled)));
      },
      py::arg("data_dir"), py::arg("predictions_csv"), py::arg("pooled") = false);
}
