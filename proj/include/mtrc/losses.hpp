#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtrc/model.hpp"

namespace mtrc {
namespace losses {

// Multi-label logistic loss: per frame the sum over tools of
// -[y log p + (1-y) log(1-p)], averaged over frames and clips.
// probs is [B][N][T] clamped to [eps, 1-eps]; labels is 0/1.
double tool_loss(const std::vector<double>& tool_probs,
                 const std::vector<uint8_t>& tool_labels, int batch, int n_f,
                 int num_tools);

// Softmax cross-entropy: -log p[y], averaged over frames and clips.
double phase_loss(const std::vector<double>& phase_probs,
                  const std::vector<int>& phase_labels, int batch, int n_f,
                  int num_phases);

// Two-outcome KL divergence D([p,1-p] || [q,1-q]); inputs must lie in (0,1).
double bernoulli_kl(double p, double q);

// Symmetrized Bernoulli KL summed over tools, averaged over frames and clips.
double correlation_loss(const std::vector<double>& tool_probs,
                        const std::vector<double>& tool_priors, int batch,
                        int n_f, int num_tools);

// Categorical symmetric KL between two distributions of length k.
double categorical_sym_kl(const double* p, const double* q, int k);

// Sum of squared weights over trainable partitions.
double weight_decay_sum(const ModelParams& params, const PartitionMask& trainable);

// Assembles the overall objective; inactive components are excluded from the
// total but their values are kept for logging. Throws ConfigError on negative
// lambdas.
LossBreakdown total_loss(double tool, double phase, double corr,
                         double decay_sum, const Lambdas& lambdas,
                         const ActiveLosses& active = {});

// One CSV row per optimization step.
std::string csv_header();
std::string csv_row(int64_t step, const LossBreakdown& b);

}  // namespace losses
}  // namespace mtrc
