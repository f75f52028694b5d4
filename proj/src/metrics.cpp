#include "mtrc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mtrc {

void write_predictions_csv(const std::string& path,
                           const std::vector<PredictionRecord>& records,
                           int num_phases, int num_tools) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "video_id,frame_idx,phase_pred";
  for (int j = 0; j < num_phases; ++j) os << ",pp" << j;
  for (int c = 0; c < num_tools; ++c) os << ",tp" << c;
  os << '\n';
  char buf[32];
  for (const auto& r : records) {
    if (static_cast<int>(r.phase_probs.size()) != num_phases ||
        static_cast<int>(r.tool_probs.size()) != num_tools)
      throw DimensionError("prediction record has wrong probability count");
    os << r.video_id << ',' << r.frame_idx << ',' << r.phase_pred;
    for (double v : r.phase_probs) {
      std::snprintf(buf, sizeof(buf), ",%.10g", v);
      os << buf;
    }
    for (double v : r.tool_probs) {
      std::snprintf(buf, sizeof(buf), ",%.10g", v);
      os << buf;
    }
    os << '\n';
  }
  if (!os) throw IoError("write failed: " + path);
}

std::vector<PredictionRecord> read_predictions_csv(const std::string& path,
                                                   int num_phases,
                                                   int num_tools) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(is, line)) throw ParseError(path + ": empty file");
  std::vector<PredictionRecord> out;
  int line_no = 1;
  const int want_cols = 3 + num_phases + num_tools;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (static_cast<int>(cols.size()) != want_cols)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(want_cols) + " columns, got " +
                       std::to_string(cols.size()));
    PredictionRecord r;
    r.video_id = cols[0];
    try {
      r.frame_idx = std::stoi(cols[1]);
      r.phase_pred = std::stoi(cols[2]);
      for (int j = 0; j < num_phases; ++j)
        r.phase_probs.push_back(std::stod(cols[3 + j]));
      for (int c = 0; c < num_tools; ++c)
        r.tool_probs.push_back(std::stod(cols[3 + num_phases + c]));
    } catch (const std::exception&) {
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": malformed numeric column");
    }
    out.push_back(std::move(r));
  }
  return out;
}

int argmax_lowest_tie(const double* values, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

PhasePrRe phase_pr_re(const std::vector<int>& gt, const std::vector<int>& pred,
                      int num_phases) {
  if (gt.size() != pred.size())
    throw AlignmentError("phase_pr_re: label length mismatch");
  std::vector<int64_t> tp(num_phases, 0), pcount(num_phases, 0),
      gcount(num_phases, 0);
  for (size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] < 0 || gt[i] >= num_phases || pred[i] < 0 ||
        pred[i] >= num_phases)
      throw ConfigError("phase_pr_re: label out of range");
    ++gcount[gt[i]];
    ++pcount[pred[i]];
    if (gt[i] == pred[i]) ++tp[gt[i]];
  }
  PhasePrRe out;
  out.precision.assign(num_phases, -1.0);
  out.recall.assign(num_phases, -1.0);
  double pr_sum = 0.0, re_sum = 0.0;
  int pr_n = 0, re_n = 0;
  for (int z = 0; z < num_phases; ++z) {
    if (pcount[z] > 0) {
      out.precision[z] = static_cast<double>(tp[z]) / pcount[z];
      pr_sum += out.precision[z];
      ++pr_n;
    }
    if (gcount[z] > 0) {
      out.recall[z] = static_cast<double>(tp[z]) / gcount[z];
      re_sum += out.recall[z];
      ++re_n;
    }
  }
  out.mean_precision = pr_n ? pr_sum / pr_n : 0.0;
  out.mean_recall = re_n ? re_sum / re_n : 0.0;
  return out;
}

double video_accuracy(const std::vector<int>& gt,
                      const std::vector<int>& pred) {
  if (gt.size() != pred.size())
    throw AlignmentError("video_accuracy: label length mismatch");
  if (gt.empty()) throw AlignmentError("video_accuracy: empty video");
  int64_t correct = 0;
  for (size_t i = 0; i < gt.size(); ++i) correct += gt[i] == pred[i];
  return static_cast<double>(correct) / gt.size();
}

double average_precision(const std::vector<double>& scores,
                         const std::vector<uint8_t>& labels) {
  if (scores.size() != labels.size())
    throw AlignmentError("average_precision: size mismatch");
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  double sum = 0.0;
  int64_t positives = 0;
  for (size_t k = 0; k < n; ++k) {
    if (!labels[order[k]]) continue;
    ++positives;
    sum += static_cast<double>(positives) / static_cast<double>(k + 1);
  }
  if (positives == 0) return -1.0;
  return sum / static_cast<double>(positives);
}

double f1_score(double mean_pr, double mean_re) {
  if (mean_pr + mean_re <= 0.0) return 0.0;
  return 2.0 * mean_pr * mean_re / (mean_pr + mean_re);
}

std::vector<double> confusion_matrix(const std::vector<int>& gt,
                                     const std::vector<int>& pred,
                                     int num_phases) {
  if (gt.size() != pred.size())
    throw AlignmentError("confusion_matrix: label length mismatch");
  std::vector<int64_t> counts(static_cast<size_t>(num_phases) * num_phases, 0);
  for (size_t i = 0; i < gt.size(); ++i)
    ++counts[static_cast<size_t>(gt[i]) * num_phases + pred[i]];
  std::vector<double> out(counts.size(), 0.0);
  for (int y = 0; y < num_phases; ++y) {
    int64_t row = 0;
    for (int x = 0; x < num_phases; ++x)
      row += counts[static_cast<size_t>(y) * num_phases + x];
    if (row == 0) continue;
    for (int x = 0; x < num_phases; ++x)
      out[static_cast<size_t>(y) * num_phases + x] =
          static_cast<double>(counts[static_cast<size_t>(y) * num_phases + x]) /
          row;
  }
  return out;
}

std::vector<int64_t> cooccurrence_counts(const std::vector<int>& phase_labels,
                                         const std::vector<uint8_t>& tool_labels,
                                         int num_phases, int num_tools) {
  if (tool_labels.size() != phase_labels.size() * static_cast<size_t>(num_tools))
    throw AlignmentError("cooccurrence_counts: label size mismatch");
  std::vector<int64_t> counts(static_cast<size_t>(num_tools + 1) * num_phases,
                              0);
  for (size_t i = 0; i < phase_labels.size(); ++i) {
    const int z = phase_labels[i];
    bool any = false;
    for (int c = 0; c < num_tools; ++c) {
      if (tool_labels[i * num_tools + c]) {
        ++counts[static_cast<size_t>(c) * num_phases + z];
        any = true;
      }
    }
    if (!any) ++counts[static_cast<size_t>(num_tools) * num_phases + z];
  }
  return counts;
}

std::vector<double> cooccurrence_matrix(const std::vector<int>& phase_labels,
                                        const std::vector<uint8_t>& tool_labels,
                                        int num_phases, int num_tools) {
  const auto counts =
      cooccurrence_counts(phase_labels, tool_labels, num_phases, num_tools);
  std::vector<double> out(counts.size(), 0.0);
  for (int r = 0; r < num_tools + 1; ++r) {
    int64_t row = 0;
    for (int z = 0; z < num_phases; ++z)
      row += counts[static_cast<size_t>(r) * num_phases + z];
    if (row == 0) continue;
    for (int z = 0; z < num_phases; ++z)
      out[static_cast<size_t>(r) * num_phases + z] =
          static_cast<double>(counts[static_cast<size_t>(r) * num_phases + z]) /
          row;
  }
  return out;
}

std::vector<double> cooccurrence_diff(const std::vector<int64_t>& gt_counts,
                                      const std::vector<int64_t>& pred_counts) {
  if (gt_counts.size() != pred_counts.size())
    throw AlignmentError("cooccurrence_diff: shape mismatch");
  std::vector<int64_t> diff(gt_counts.size());
  int64_t lo = INT64_MAX, hi = INT64_MIN;
  for (size_t i = 0; i < diff.size(); ++i) {
    diff[i] = std::llabs(gt_counts[i] - pred_counts[i]);
    lo = std::min(lo, diff[i]);
    hi = std::max(hi, diff[i]);
  }
  std::vector<double> out(diff.size(), 0.0);
  if (hi == lo) return out;  // all-equal counts normalize to zero
  for (size_t i = 0; i < diff.size(); ++i)
    out[i] = static_cast<double>(diff[i] - lo) / static_cast<double>(hi - lo);
  return out;
}

}  // namespace mtrc
