#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtrc/common.hpp"

namespace mtrc {

struct PredictionRecord {
  std::string video_id;
  int frame_idx = 0;
  std::vector<double> phase_probs;
  int phase_pred = 0;
  std::vector<double> tool_probs;
};

// CSV with header "video_id,frame_idx,phase_pred,pp0..pp6,tp0..tp6" (the
// probability column count follows num_phases/num_tools).
void write_predictions_csv(const std::string& path,
                           const std::vector<PredictionRecord>& records,
                           int num_phases, int num_tools);
std::vector<PredictionRecord> read_predictions_csv(const std::string& path,
                                                   int num_phases,
                                                   int num_tools);

// Ties break toward the lowest class index.
int argmax_lowest_tie(const double* values, int n);

struct PhasePrRe {
  // -1 marks "undefined": no predicted frames (precision) or no ground-truth
  // frames (recall) for that phase; undefined phases are excluded from means
  std::vector<double> precision;
  std::vector<double> recall;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
};

PhasePrRe phase_pr_re(const std::vector<int>& gt, const std::vector<int>& pred,
                      int num_phases);

// Fraction of frames classified correctly.
double video_accuracy(const std::vector<int>& gt, const std::vector<int>& pred);

// Ranked by descending score, ties by ascending index; mean over positive
// ranks of precision@rank. Returns -1 when there are no positives.
double average_precision(const std::vector<double>& scores,
                         const std::vector<uint8_t>& labels);

// Harmonic mean; 0 when both inputs are 0.
double f1_score(double mean_pr, double mean_re);

// [gt_row][pred_col], each ground-truth row normalized to sum 1; rows without
// support stay zero. The diagonal is the per-phase recall.
std::vector<double> confusion_matrix(const std::vector<int>& gt,
                                     const std::vector<int>& pred,
                                     int num_phases);

// Raw counts, rows = num_tools tools plus a trailing no-tool row, columns =
// phases. tool_labels is [len][num_tools].
std::vector<int64_t> cooccurrence_counts(const std::vector<int>& phase_labels,
                                         const std::vector<uint8_t>& tool_labels,
                                         int num_phases, int num_tools);

// Row-normalized counts; zero rows stay zero.
std::vector<double> cooccurrence_matrix(const std::vector<int>& phase_labels,
                                        const std::vector<uint8_t>& tool_labels,
                                        int num_phases, int num_tools);

// |gt - pred| elementwise on raw counts, min-max normalized into [0,1] over
// the whole matrix; an all-equal pair maps to all zeros.
std::vector<double> cooccurrence_diff(const std::vector<int64_t>& gt_counts,
                                      const std::vector<int64_t>& pred_counts);

}  // namespace mtrc
