#include "mtrc/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace mtrc {

namespace {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  if (v.empty()) return out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(v.size()));
  return out;
}

}  // namespace

EvalReport evaluate_run(const std::vector<PredictionRecord>& predictions,
                        const LoadedDataset& data, bool pooled_pr_re) {
  const int num_phases = data.spec.num_phases;
  const int num_tools = data.spec.num_tools;

  std::map<std::string, std::map<int, const PredictionRecord*>> by_video;
  for (const auto& r : predictions) by_video[r.video_id][r.frame_idx] = &r;

  std::vector<std::string> test_ids = data.split.test_videos;
  std::sort(test_ids.begin(), test_ids.end());

  // alignment check first
  std::string missing;
  int missing_count = 0;
  for (const auto& id : test_ids) {
    const VideoRecord& v = data.video(id);
    const auto it = by_video.find(id);
    for (int t = 0; t < v.length; ++t) {
      if (it == by_video.end() || !it->second.count(t)) {
        ++missing_count;
        if (missing_count <= 20)
          missing += (missing.empty() ? "" : ", ") + id + ":" +
                     std::to_string(t);
      }
    }
  }
  if (missing_count > 0)
    throw AlignmentError("missing predictions for " +
                         std::to_string(missing_count) + " frames: " + missing);

  EvalReport rep;
  rep.num_phases = num_phases;
  rep.num_tools = num_tools;
  rep.pooled_pr_re = pooled_pr_re;

  std::vector<double> video_pr, video_re, video_ac;
  std::vector<std::vector<double>> per_phase_pr(num_phases), per_phase_re(num_phases);
  std::vector<int> pooled_gt_all, pooled_pred_all;
  std::vector<uint8_t> pooled_tool_gt, pooled_tool_pred;
  std::vector<std::vector<double>> tool_scores(num_tools);
  std::vector<std::vector<uint8_t>> tool_truth(num_tools);

  for (const auto& id : test_ids) {
    const VideoRecord& v = data.video(id);
    const auto& frames = by_video.at(id);
    std::vector<int> gt(v.phase_labels.begin(), v.phase_labels.end());
    std::vector<int> pred;
    pred.reserve(v.length);
    for (int t = 0; t < v.length; ++t) {
      const PredictionRecord& r = *frames.at(t);
      pred.push_back(r.phase_pred);
      for (int c = 0; c < num_tools; ++c) {
        tool_scores[c].push_back(r.tool_probs[c]);
        tool_truth[c].push_back(
            v.tool_labels[static_cast<size_t>(t) * num_tools + c]);
        pooled_tool_pred.push_back(r.tool_probs[c] >= 0.5 ? 1 : 0);
        pooled_tool_gt.push_back(
            v.tool_labels[static_cast<size_t>(t) * num_tools + c]);
      }
    }
    pooled_gt_all.insert(pooled_gt_all.end(), gt.begin(), gt.end());
    pooled_pred_all.insert(pooled_pred_all.end(), pred.begin(), pred.end());

    const PhasePrRe pr = phase_pr_re(gt, pred, num_phases);
    video_pr.push_back(pr.mean_precision);
    video_re.push_back(pr.mean_recall);
    video_ac.push_back(video_accuracy(gt, pred));
    for (int z = 0; z < num_phases; ++z) {
      if (pr.precision[z] >= 0.0) per_phase_pr[z].push_back(pr.precision[z]);
      if (pr.recall[z] >= 0.0) per_phase_re[z].push_back(pr.recall[z]);
    }
    rep.per_video_accuracy.emplace_back(id, video_ac.back());
  }

  if (pooled_pr_re) {
    const PhasePrRe pooled =
        phase_pr_re(pooled_gt_all, pooled_pred_all, num_phases);
    rep.mean_precision = pooled.mean_precision;
    rep.mean_recall = pooled.mean_recall;
    rep.std_precision = 0.0;
    rep.std_recall = 0.0;
    rep.per_phase_precision = pooled.precision;
    rep.per_phase_recall = pooled.recall;
  } else {
    const MeanStd pr = mean_std(video_pr);
    const MeanStd re = mean_std(video_re);
    rep.mean_precision = pr.mean;
    rep.std_precision = pr.std;
    rep.mean_recall = re.mean;
    rep.std_recall = re.std;
    rep.per_phase_precision.assign(num_phases, -1.0);
    rep.per_phase_recall.assign(num_phases, -1.0);
    for (int z = 0; z < num_phases; ++z) {
      if (!per_phase_pr[z].empty())
        rep.per_phase_precision[z] = mean_std(per_phase_pr[z]).mean;
      if (!per_phase_re[z].empty())
        rep.per_phase_recall[z] = mean_std(per_phase_re[z]).mean;
    }
  }
  rep.f1 = f1_score(rep.mean_precision, rep.mean_recall);

  const MeanStd ac = mean_std(video_ac);
  rep.mean_accuracy = ac.mean;
  rep.std_accuracy = ac.std;

  rep.per_tool_ap.assign(num_tools, -1.0);
  double ap_sum = 0.0;
  int ap_n = 0;
  for (int c = 0; c < num_tools; ++c) {
    const double ap = average_precision(tool_scores[c], tool_truth[c]);
    rep.per_tool_ap[c] = ap;
    if (ap < 0.0) {
      rep.skipped_tools.push_back(c);
    } else {
      ap_sum += ap;
      ++ap_n;
    }
  }
  rep.map = ap_n ? ap_sum / ap_n : 0.0;

  rep.confusion = confusion_matrix(pooled_gt_all, pooled_pred_all, num_phases);
  rep.cooccurrence_gt =
      cooccurrence_matrix(pooled_gt_all, pooled_tool_gt, num_phases, num_tools);
  rep.cooccurrence_pred = cooccurrence_matrix(pooled_pred_all, pooled_tool_pred,
                                              num_phases, num_tools);
  rep.cooccurrence_diff = cooccurrence_diff(
      cooccurrence_counts(pooled_gt_all, pooled_tool_gt, num_phases, num_tools),
      cooccurrence_counts(pooled_pred_all, pooled_tool_pred, num_phases,
                          num_tools));
  return rep;
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json per_video = nlohmann::json::array();
  for (const auto& [id, ac] : r.per_video_accuracy)
    per_video.push_back({{"video_id", id}, {"accuracy", ac}});
  return nlohmann::json{
      {"num_phases", r.num_phases},
      {"num_tools", r.num_tools},
      {"phase",
       {{"per_phase_precision", r.per_phase_precision},
        {"per_phase_recall", r.per_phase_recall},
        {"mean_precision", r.mean_precision},
        {"std_precision", r.std_precision},
        {"mean_recall", r.mean_recall},
        {"std_recall", r.std_recall},
        {"f1", r.f1},
        {"mean_accuracy", r.mean_accuracy},
        {"std_accuracy", r.std_accuracy},
        {"per_video_accuracy", per_video},
        {"pooled_pr_re", r.pooled_pr_re}}},
      {"tool",
       {{"per_tool_ap", r.per_tool_ap},
        {"map", r.map},
        {"skipped_tools", r.skipped_tools}}},
  };
}

void write_matrix_csv(const std::string& path, const std::vector<double>& m,
                      int rows, int cols) {
  if (m.size() != static_cast<size_t>(rows) * cols)
    throw DimensionError("write_matrix_csv: size mismatch");
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  char buf[32];
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      std::snprintf(buf, sizeof(buf), "%.10g", m[static_cast<size_t>(y) * cols + x]);
      os << (x ? "," : "") << buf;
    }
    os << '\n';
  }
  if (!os) throw IoError("write failed: " + path);
}

std::vector<double> read_matrix_csv(const std::string& path, int rows,
                                    int cols) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::vector<double> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        out.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(line_no) +
                         ": malformed number '" + cell + "'");
      }
    }
  }
  if (out.size() != static_cast<size_t>(rows) * cols)
    throw ParseError(path + ": expected " + std::to_string(rows * cols) +
                     " values, got " + std::to_string(out.size()));
  return out;
}

void write_eval_report(const std::string& dir, const EvalReport& r) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  std::ofstream os(fs::path(dir) / "report.json", std::ios::trunc);
  if (!os) throw IoError("cannot write report.json in " + dir);
  os << eval_report_to_json(r).dump(2) << '\n';
  write_matrix_csv((fs::path(dir) / "confusion.csv").string(), r.confusion,
                   r.num_phases, r.num_phases);
  write_matrix_csv((fs::path(dir) / "cooccurrence_gt.csv").string(),
                   r.cooccurrence_gt, r.num_tools + 1, r.num_phases);
  write_matrix_csv((fs::path(dir) / "cooccurrence_pred.csv").string(),
                   r.cooccurrence_pred, r.num_tools + 1, r.num_phases);
  write_matrix_csv((fs::path(dir) / "cooccurrence_diff.csv").string(),
                   r.cooccurrence_diff, r.num_tools + 1, r.num_phases);
}

}  // namespace mtrc
