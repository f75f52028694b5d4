#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mtrc/common.hpp"
#include "mtrc/tensor.hpp"

namespace mtrc {

constexpr double kProbEps = 1e-7;

inline double clamp_prob(double p) {
  if (p < kProbEps) return kProbEps;
  if (p > 1.0 - kProbEps) return 1.0 - kProbEps;
  return p;
}

enum class MappingSource { phase_features, phase_labels };
enum class Activation { tanh, relu };

// One encoder stage: a strided 3x3 conv + tanh, or (when residual) a pair of
// stride-1 3x3 convs with an identity skip. Residual stages require
// out_channels == in_channels and stride 1.
struct ConvStage {
  int out_channels = 8;
  int stride = 1;
  bool residual = false;
};

struct ArchConfig {
  int frame_size = 28;       // network input side (frames are cropped to this)
  int channels = 3;
  int feature_dim = 32;      // dim of the shared per-frame feature g_t
  int phase_feature_dim = 32;  // dim of the recurrent feature r_t
  int num_tools = 7;
  int num_phases = 7;
  int clip_len = 10;
  std::vector<ConvStage> encoder = {
      {8, 2, false}, {8, 1, true}, {16, 2, false}, {32, 2, false}};
  MappingSource mapping_source = MappingSource::phase_features;
  bool mutual_mapping = false;
  Activation activation = Activation::tanh;  // encoder nonlinearity

  // throws ConfigError on bad dimensions
  void validate() const;
  int mapping_input_dim() const {
    return mapping_source == MappingSource::phase_features ? phase_feature_dim
                                                           : num_phases;
  }
};

enum class Partition { backbone, tool_head, phase_head, mapping_cell };
constexpr int kNumPartitions = 4;
const char* partition_name(Partition p);

struct PartitionMask {
  bool backbone = true;
  bool tool_head = true;
  bool phase_head = true;
  bool mapping_cell = true;

  static PartitionMask all() { return {}; }
  static PartitionMask none() { return {false, false, false, false}; }
  bool get(Partition p) const;
  void set(Partition p, bool v);
};

// Trainable weights, partitioned into the shared encoder, the two branch
// heads and the mapping cell. The partition is disjoint and exhaustive.
struct ModelParams {
  ArchConfig config;
  ParamSet backbone;
  ParamSet tool_head;
  ParamSet phase_head;
  ParamSet mapping_cell;

  ParamSet& partition(Partition p);
  const ParamSet& partition(Partition p) const;

  int64_t total_size() const;
};

// Gradients (or momentum buffers) mirroring the ModelParams layout.
using Grads = ModelParams;
Grads zeros_like(const ModelParams& params);

ModelParams init_parameters(const ArchConfig& config, uint64_t seed);
// Same, but the backbone is loaded from a weight container instead of being
// randomly initialized. Shape mismatches raise IoError.
ModelParams init_parameters(const ArchConfig& config, uint64_t seed,
                            const std::string& backbone_weights_file);

struct ClipBatch {
  int batch = 0;
  int n_f = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> frames;        // [batch][n_f][C][H][W]
  std::vector<uint8_t> tool_labels;  // [batch][n_f][num_tools], 0/1
  std::vector<int> phase_labels;     // [batch][n_f]
  std::vector<std::string> video_ids;
  std::vector<int> start_frames;

  int64_t frame_stride() const {
    return static_cast<int64_t>(channels) * height * width;
  }
  const double* frame(int b, int t) const {
    return frames.data() + (static_cast<int64_t>(b) * n_f + t) * frame_stride();
  }
  double* frame(int b, int t) {
    return frames.data() + (static_cast<int64_t>(b) * n_f + t) * frame_stride();
  }
  void validate(const ArchConfig& config) const;
};

struct RecurrentState {
  int batch = 0;
  int dim = 0;
  std::vector<double> hidden;  // [batch][dim]
  std::vector<double> cell;    // [batch][dim]

  static RecurrentState zeros(int batch, int dim) {
    RecurrentState s;
    s.batch = batch;
    s.dim = dim;
    s.hidden.assign(static_cast<size_t>(batch) * dim, 0.0);
    s.cell.assign(static_cast<size_t>(batch) * dim, 0.0);
    return s;
  }
};

struct JointPrediction {
  int batch = 0;
  int n_f = 0;
  int num_tools = 0;
  int num_phases = 0;
  int phase_feature_dim = 0;
  std::vector<double> tool_probs;      // [B][N][T], clamped sigmoid
  std::vector<double> phase_probs;     // [B][N][Z], clamped softmax
  std::vector<double> phase_features;  // [B][N][h]
  std::vector<double> tool_priors;     // [B][N][T], from the mapping cell
  std::vector<double> phase_priors;    // [B][N][Z], mutual mapping only
};

// --- stand-alone branch operations ------------------------------------

// Per-frame shared features; frames are encoded independently.
// Returns [batch][n_f][feature_dim].
std::vector<double> encode_frames(const ClipBatch& clip,
                                  const ParamSet& backbone,
                                  const ArchConfig& config);

// Affine + clamped sigmoid, frame-wise. features is [B][N][D].
std::vector<double> tool_head_forward(const std::vector<double>& features,
                                      int batch, int n_f,
                                      const ParamSet& tool_head,
                                      const ArchConfig& config);

struct PhaseForward {
  std::vector<double> phase_probs;     // [B][N][Z]
  std::vector<double> phase_features;  // [B][N][h]
  RecurrentState final_state;
};

// Single-layer unidirectional LSTM over the clip followed by an affine
// softmax classifier; strictly causal.
PhaseForward phase_head_forward(const std::vector<double>& features, int batch,
                                int n_f, const RecurrentState& state0,
                                const ParamSet& phase_head,
                                const ArchConfig& config);

// tool_priors = clamped sigmoid(M * input + b). The input is r_t for
// mapping_source == phase_features and the phase probabilities otherwise.
std::vector<double> map_phase_features(const std::vector<double>& mapping_input,
                                       int batch, int n_f,
                                       const ParamSet& mapping_cell,
                                       const ArchConfig& config);

JointPrediction forward(const ClipBatch& clip, const ModelParams& params);

// --- training-path forward/backward ------------------------------------

struct ActiveLosses {
  bool tool = true;
  bool phase = true;
  bool corr = true;
  // When set, the tool supervision is applied to the mapped priors instead of
  // the tool branch output (stage-2 of the three-step strategy).
  bool mapped_tool = false;
};

struct Lambdas {
  double l1 = 1.0;    // phase loss weight
  double l2 = 0.5;    // correlation loss weight
  double l3 = 5e-4;   // weight decay coefficient
};

struct LossBreakdown {
  double tool_loss = 0.0;
  double phase_loss = 0.0;
  double correlation_loss = 0.0;
  double weight_decay = 0.0;  // sum of squared trainable weights
  double total = 0.0;
  Lambdas lambdas;
  ActiveLosses active;
};

struct BatchEval {
  JointPrediction pred;
  LossBreakdown breakdown;
};

// Forward pass plus loss breakdown; when `grads` is non-null, also the
// analytic gradient of the active data terms (without the weight-decay
// gradient, which the optimizer applies; see apply_decay_gradient).
// Gradients are accumulated only for partitions enabled in `trainable`.
BatchEval evaluate_batch(const ClipBatch& clip, const ModelParams& params,
                         const Lambdas& lambdas, const ActiveLosses& active,
                         const PartitionMask& trainable, Grads* grads,
                         int threads = 1);

// Adds d/dw of l3 * ||W||^2 (= 2*l3*w) for trainable partitions.
void apply_decay_gradient(const ModelParams& params, const PartitionMask& trainable,
                          double l3, Grads& grads);

// --- streaming (online) inference --------------------------------------

// Carries the recurrent state across a whole video at 1 fps; never looks at
// future frames.
class StreamingPredictor {
 public:
  explicit StreamingPredictor(const ModelParams& params);

  struct FrameOutput {
    std::vector<double> tool_probs;   // [T]
    std::vector<double> phase_probs;  // [Z]
    std::vector<double> tool_priors;  // [T]
  };

  // frame is [C][H][W] at the config frame_size.
  FrameOutput step(const double* frame);
  void reset();

 private:
  const ModelParams& params_;
  RecurrentState state_;
};

// --- helpers shared with the training module ----------------------------

void for_each_value(ModelParams& p, const std::function<void(double&)>& fn);
void for_each_value(const ModelParams& p, const std::function<void(double)>& fn);
bool all_finite(const ModelParams& p);

}  // namespace mtrc
