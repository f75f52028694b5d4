#include "mtrc/losses.hpp"

#include <cmath>
#include <cstdio>

namespace mtrc {
namespace losses {

namespace {

void check_size(size_t got, int64_t want, const char* what) {
  if (got != static_cast<size_t>(want))
    throw DimensionError(std::string(what) + ": expected " +
                         std::to_string(want) + " values, got " +
                         std::to_string(got));
}

}  // namespace

double tool_loss(const std::vector<double>& tool_probs,
                 const std::vector<uint8_t>& tool_labels, int batch, int n_f,
                 int num_tools) {
  const int64_t n = static_cast<int64_t>(batch) * n_f * num_tools;
  check_size(tool_probs.size(), n, "tool_loss probs");
  check_size(tool_labels.size(), n, "tool_loss labels");
  double sum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double p = tool_probs[i];
    if (!(p > 0.0 && p < 1.0))
      throw NumericError("tool_loss: probability outside (0,1)");
    sum -= tool_labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return sum / (static_cast<double>(batch) * n_f);
}

double phase_loss(const std::vector<double>& phase_probs,
                  const std::vector<int>& phase_labels, int batch, int n_f,
                  int num_phases) {
  check_size(phase_probs.size(), static_cast<int64_t>(batch) * n_f * num_phases,
             "phase_loss probs");
  check_size(phase_labels.size(), static_cast<int64_t>(batch) * n_f,
             "phase_loss labels");
  double sum = 0.0;
  for (int64_t i = 0; i < static_cast<int64_t>(batch) * n_f; ++i) {
    const int y = phase_labels[i];
    if (y < 0 || y >= num_phases)
      throw ConfigError("phase_loss: label " + std::to_string(y) +
                        " out of range [0," + std::to_string(num_phases) + ")");
    sum -= std::log(phase_probs[i * num_phases + y]);
  }
  return sum / (static_cast<double>(batch) * n_f);
}

double bernoulli_kl(double p, double q) {
  if (!(p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0))
    throw NumericError("bernoulli_kl: inputs must lie in (0,1)");
  return p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
}

double correlation_loss(const std::vector<double>& tool_probs,
                        const std::vector<double>& tool_priors, int batch,
                        int n_f, int num_tools) {
  const int64_t n = static_cast<int64_t>(batch) * n_f * num_tools;
  check_size(tool_probs.size(), n, "correlation_loss probs");
  check_size(tool_priors.size(), n, "correlation_loss priors");
  double sum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    sum += 0.5 * bernoulli_kl(tool_probs[i], tool_priors[i]) +
           0.5 * bernoulli_kl(tool_priors[i], tool_probs[i]);
  }
  return sum / (static_cast<double>(batch) * n_f);
}

double categorical_sym_kl(const double* p, const double* q, int k) {
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    if (!(p[i] > 0.0 && q[i] > 0.0))
      throw NumericError("categorical_sym_kl: probabilities must be positive");
    sum += 0.5 * p[i] * std::log(p[i] / q[i]) +
           0.5 * q[i] * std::log(q[i] / p[i]);
  }
  return sum;
}

double weight_decay_sum(const ModelParams& params,
                        const PartitionMask& trainable) {
  double s = 0.0;
  for (int pi = 0; pi < kNumPartitions; ++pi) {
    const auto part = static_cast<Partition>(pi);
    if (!trainable.get(part)) continue;
    s += params.partition(part).squared_norm();
  }
  return s;
}

LossBreakdown total_loss(double tool, double phase, double corr,
                         double decay_sum, const Lambdas& lambdas,
                         const ActiveLosses& active) {
  if (lambdas.l1 < 0.0 || lambdas.l2 < 0.0 || lambdas.l3 < 0.0)
    throw ConfigError("total_loss: lambdas must be nonnegative");
  LossBreakdown b;
  b.tool_loss = tool;
  b.phase_loss = phase;
  b.correlation_loss = corr;
  b.weight_decay = decay_sum;
  b.lambdas = lambdas;
  b.active = active;
  b.total = (active.tool || active.mapped_tool ? tool : 0.0) +
            (active.phase ? lambdas.l1 * phase : 0.0) +
            (active.corr ? lambdas.l2 * corr : 0.0) + lambdas.l3 * decay_sum;
  return b;
}

std::string csv_header() {
  return "step,tool_loss,phase_loss,correlation_loss,weight_decay,total";
}

std::string csv_row(int64_t step, const LossBreakdown& b) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g,%.10g",
                static_cast<long long>(step), b.tool_loss, b.phase_loss,
                b.correlation_loss, b.weight_decay, b.total);
  return buf;
}

}  // namespace losses
}  // namespace mtrc
