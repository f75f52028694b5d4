#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mtrc/metrics.hpp"
#include "mtrc/synth.hpp"

namespace mtrc {

struct EvalReport {
  int num_phases = 7;
  int num_tools = 7;

  // phase metrics, averaged per video then over videos
  std::vector<double> per_phase_precision;  // -1 when no video had support
  std::vector<double> per_phase_recall;
  double mean_precision = 0.0, std_precision = 0.0;
  double mean_recall = 0.0, std_recall = 0.0;
  double f1 = 0.0;
  std::vector<std::pair<std::string, double>> per_video_accuracy;
  double mean_accuracy = 0.0, std_accuracy = 0.0;

  // tool metrics, pooled over all test frames
  std::vector<double> per_tool_ap;  // -1 for tools with no positives
  double map = 0.0;
  std::vector<int> skipped_tools;

  // pooled matrices
  std::vector<double> confusion;          // [Z][Z]
  std::vector<double> cooccurrence_gt;    // [(T+1)][Z]
  std::vector<double> cooccurrence_pred;  // [(T+1)][Z]
  std::vector<double> cooccurrence_diff;  // [(T+1)][Z]

  bool pooled_pr_re = false;  // alternative frame-pooled PR/RE mode
};

// Joins predictions against the annotated test split. Every annotated test
// frame must have exactly one prediction; missing frames raise
// AlignmentError listing the (video, frame) pairs.
EvalReport evaluate_run(const std::vector<PredictionRecord>& predictions,
                        const LoadedDataset& data, bool pooled_pr_re = false);

nlohmann::json eval_report_to_json(const EvalReport& report);

// report.json plus one CSV per matrix (confusion, cooccurrence_gt,
// cooccurrence_pred, cooccurrence_diff).
void write_eval_report(const std::string& dir, const EvalReport& report);

// Matrix CSV helpers (plain rows of comma-separated numbers).
void write_matrix_csv(const std::string& path, const std::vector<double>& m,
                      int rows, int cols);
std::vector<double> read_matrix_csv(const std::string& path, int rows,
                                    int cols);

}  // namespace mtrc
