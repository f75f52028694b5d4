#include "mtrc/model.hpp"

#include <cmath>
#include <cstring>
#include <thread>

#include "mtrc/losses.hpp"
#include "mtrc/weights_io.hpp"

namespace mtrc {

namespace {

int conv_out_dim(int in, int stride) { return (in + 2 - 3) / stride + 1; }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double activate(double v, Activation act) {
  return act == Activation::tanh ? std::tanh(v) : (v > 0.0 ? v : 0.0);
}

// derivative expressed through the activation output
double activate_grad(double out, Activation act) {
  return act == Activation::tanh ? 1.0 - out * out : (out > 0.0 ? 1.0 : 0.0);
}

void softmax(const double* x, int k, double* out) {
  double m = x[0];
  for (int i = 1; i < k; ++i) m = std::max(m, x[i]);
  double s = 0.0;
  for (int i = 0; i < k; ++i) {
    out[i] = std::exp(x[i] - m);
    s += out[i];
  }
  for (int i = 0; i < k; ++i) out[i] /= s;
}

// dv_i = P_i * (dP_i - sum_j P_j dP_j), with dP masked where the clamp is
// active (the clamped value is constant there).
void softmax_backward(const double* p_raw, const double* dp, int k,
                      double* dv) {
  double dot = 0.0;
  for (int i = 0; i < k; ++i) {
    const double di =
        (p_raw[i] < kProbEps || p_raw[i] > 1.0 - kProbEps) ? 0.0 : dp[i];
    dv[i] = di;  // reuse as masked dp
    dot += p_raw[i] * di;
  }
  for (int i = 0; i < k; ++i) dv[i] = p_raw[i] * (dv[i] - dot);
}

double sigmoid_clamp_factor(double p_raw) {
  if (p_raw < kProbEps || p_raw > 1.0 - kProbEps) return 0.0;
  return p_raw * (1.0 - p_raw);
}

// 3x3 convolution, zero padding 1.
void conv3x3(const double* in, int ic, int ih, int iw, const double* w,
             const double* b, int oc, int stride, double* out, int oh,
             int ow) {
  for (int o = 0; o < oc; ++o) {
    double* outp = out + static_cast<int64_t>(o) * oh * ow;
    for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) outp[i] = b[o];
  }
  for (int o = 0; o < oc; ++o) {
    double* outp = out + static_cast<int64_t>(o) * oh * ow;
    for (int c = 0; c < ic; ++c) {
      const double* inp = in + static_cast<int64_t>(c) * ih * iw;
      const double* wp = w + (static_cast<int64_t>(o) * ic + c) * 9;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy0 = oy * stride - 1;
        for (int ox = 0; ox < ow; ++ox) {
          const int ix0 = ox * stride - 1;
          double acc = 0.0;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= ih) continue;
            const double* row = inp + static_cast<int64_t>(iy) * iw;
            const double* wr = wp + ky * 3;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= iw) continue;
              acc += wr[kx] * row[ix];
            }
          }
          outp[oy * ow + ox] += acc;
        }
      }
    }
  }
}

// Backward of conv3x3. din may be null when the input gradient is not needed.
void conv3x3_backward(const double* in, int ic, int ih, int iw,
                      const double* w, int oc, int stride, const double* dout,
                      int oh, int ow, double* dw, double* db, double* din) {
  if (din) std::memset(din, 0, sizeof(double) * ic * ih * iw);
  for (int o = 0; o < oc; ++o) {
    const double* doutp = dout + static_cast<int64_t>(o) * oh * ow;
    double dbacc = 0.0;
    for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i)
      dbacc += doutp[i];
    db[o] += dbacc;
    for (int c = 0; c < ic; ++c) {
      const double* inp = in + static_cast<int64_t>(c) * ih * iw;
      const double* wp = w + (static_cast<int64_t>(o) * ic + c) * 9;
      double* dwp = dw + (static_cast<int64_t>(o) * ic + c) * 9;
      double* dinp = din ? din + static_cast<int64_t>(c) * ih * iw : nullptr;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy0 = oy * stride - 1;
        for (int ox = 0; ox < ow; ++ox) {
          const int ix0 = ox * stride - 1;
          const double go = doutp[oy * ow + ox];
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= ih) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= iw) continue;
              dwp[ky * 3 + kx] += go * inp[iy * iw + ix];
              if (dinp) dinp[iy * iw + ix] += go * wp[ky * 3 + kx];
            }
          }
        }
      }
    }
  }
}

struct StageDims {
  int c, h, w;
};

std::vector<StageDims> encoder_dims(const ArchConfig& cfg) {
  std::vector<StageDims> dims;
  dims.push_back({cfg.channels, cfg.frame_size, cfg.frame_size});
  for (const auto& st : cfg.encoder) {
    const StageDims& prev = dims.back();
    dims.push_back({st.out_channels, conv_out_dim(prev.h, st.stride),
                    conv_out_dim(prev.w, st.stride)});
  }
  return dims;
}

struct EncoderCache {
  std::vector<std::vector<double>> act;  // act[0] = input frame
  std::vector<std::vector<double>> mid;  // residual stages only
};

void encode_frame(const double* frame, const ParamSet& backbone,
                  const ArchConfig& cfg, const std::vector<StageDims>& dims,
                  EncoderCache& cache, double* g_out) {
  const size_t stages = cfg.encoder.size();
  cache.act.resize(stages + 1);
  cache.mid.resize(stages);
  cache.act[0].assign(frame, frame + static_cast<int64_t>(dims[0].c) *
                                         dims[0].h * dims[0].w);
  int cursor = 0;
  for (size_t k = 0; k < stages; ++k) {
    const auto& st = cfg.encoder[k];
    const StageDims& di = dims[k];
    const StageDims& od = dims[k + 1];
    auto& out = cache.act[k + 1];
    out.assign(static_cast<int64_t>(od.c) * od.h * od.w, 0.0);
    if (!st.residual) {
      const Tensor& w = backbone.items[cursor++].tensor;
      const Tensor& b = backbone.items[cursor++].tensor;
      conv3x3(cache.act[k].data(), di.c, di.h, di.w, w.data(), b.data(), od.c,
              st.stride, out.data(), od.h, od.w);
      for (auto& v : out) v = activate(v, cfg.activation);
    } else {
      const Tensor& w1 = backbone.items[cursor++].tensor;
      const Tensor& b1 = backbone.items[cursor++].tensor;
      const Tensor& w2 = backbone.items[cursor++].tensor;
      const Tensor& b2 = backbone.items[cursor++].tensor;
      auto& mid = cache.mid[k];
      mid.assign(out.size(), 0.0);
      conv3x3(cache.act[k].data(), di.c, di.h, di.w, w1.data(), b1.data(),
              od.c, 1, mid.data(), od.h, od.w);
      for (auto& v : mid) v = activate(v, cfg.activation);
      conv3x3(mid.data(), od.c, od.h, od.w, w2.data(), b2.data(), od.c, 1,
              out.data(), od.h, od.w);
      for (int64_t i = 0; i < static_cast<int64_t>(out.size()); ++i)
        out[i] = activate(out[i] + cache.act[k][i], cfg.activation);
    }
  }
  // global average pooling
  const StageDims& last = dims.back();
  const double inv = 1.0 / (static_cast<double>(last.h) * last.w);
  const auto& top = cache.act.back();
  for (int c = 0; c < last.c; ++c) {
    double s = 0.0;
    const double* p = top.data() + static_cast<int64_t>(c) * last.h * last.w;
    for (int i = 0; i < last.h * last.w; ++i) s += p[i];
    g_out[c] = s * inv;
  }
}

void encoder_backward(const EncoderCache& cache, const ParamSet& backbone,
                      const ArchConfig& cfg, const std::vector<StageDims>& dims,
                      const double* dg, ParamSet& grads) {
  const size_t stages = cfg.encoder.size();
  const StageDims& last = dims.back();
  const double inv = 1.0 / (static_cast<double>(last.h) * last.w);
  std::vector<double> dact(static_cast<int64_t>(last.c) * last.h * last.w);
  for (int c = 0; c < last.c; ++c) {
    const double v = dg[c] * inv;
    double* p = dact.data() + static_cast<int64_t>(c) * last.h * last.w;
    for (int i = 0; i < last.h * last.w; ++i) p[i] = v;
  }
  // walk the parameter list backward, mirroring encode_frame's cursor
  int cursor = static_cast<int>(backbone.items.size());
  std::vector<double> buf;
  for (size_t k = stages; k-- > 0;) {
    const auto& st = cfg.encoder[k];
    const StageDims& di = dims[k];
    const StageDims& od = dims[k + 1];
    const auto& out = cache.act[k + 1];
    const bool need_din = k > 0;
    if (!st.residual) {
      cursor -= 2;
      const Tensor& w = backbone.items[cursor].tensor;
      Tensor& dw = grads.items[cursor].tensor;
      Tensor& db = grads.items[cursor + 1].tensor;
      for (int64_t i = 0; i < static_cast<int64_t>(dact.size()); ++i)
        dact[i] *= activate_grad(out[i], cfg.activation);
      buf.assign(static_cast<int64_t>(di.c) * di.h * di.w, 0.0);
      conv3x3_backward(cache.act[k].data(), di.c, di.h, di.w, w.data(), od.c,
                       st.stride, dact.data(), od.h, od.w, dw.data(),
                       db.data(), need_din ? buf.data() : nullptr);
      dact.swap(buf);
    } else {
      cursor -= 4;
      const Tensor& w1 = backbone.items[cursor].tensor;
      Tensor& dw1 = grads.items[cursor].tensor;
      Tensor& db1 = grads.items[cursor + 1].tensor;
      const Tensor& w2 = backbone.items[cursor + 2].tensor;
      Tensor& dw2 = grads.items[cursor + 2].tensor;
      Tensor& db2 = grads.items[cursor + 3].tensor;
      const auto& mid = cache.mid[k];
      // dz through the outer activation; the skip contributes dz directly
      for (int64_t i = 0; i < static_cast<int64_t>(dact.size()); ++i)
        dact[i] *= activate_grad(out[i], cfg.activation);
      std::vector<double> dmid(mid.size(), 0.0);
      conv3x3_backward(mid.data(), od.c, od.h, od.w, w2.data(), od.c, 1,
                       dact.data(), od.h, od.w, dw2.data(), db2.data(),
                       dmid.data());
      for (int64_t i = 0; i < static_cast<int64_t>(dmid.size()); ++i)
        dmid[i] *= activate_grad(mid[i], cfg.activation);
      buf.assign(static_cast<int64_t>(di.c) * di.h * di.w, 0.0);
      conv3x3_backward(cache.act[k].data(), di.c, di.h, di.w, w1.data(), od.c,
                       1, dmid.data(), od.h, od.w, dw1.data(), db1.data(),
                       buf.data());
      // skip connection: residual stages preserve shape
      for (int64_t i = 0; i < static_cast<int64_t>(buf.size()); ++i)
        buf[i] += dact[i];
      dact.swap(buf);
    }
  }
}

// affine y = W x + b with W stored row-major [rows, cols]
void affine(const double* x, const double* w, const double* b, int rows,
            int cols, double* y) {
  for (int r = 0; r < rows; ++r) {
    double acc = b[r];
    const double* wr = w + static_cast<int64_t>(r) * cols;
    for (int c = 0; c < cols; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

void affine_backward(const double* x, const double* w, const double* dy,
                     int rows, int cols, double* dw, double* db, double* dx) {
  for (int r = 0; r < rows; ++r) {
    const double g = dy[r];
    db[r] += g;
    const double* wr = w + static_cast<int64_t>(r) * cols;
    double* dwr = dw + static_cast<int64_t>(r) * cols;
    for (int c = 0; c < cols; ++c) {
      dwr[c] += g * x[c];
      if (dx) dx[c] += g * wr[c];
    }
  }
}

void lstm_step(const double* x, const double* h_prev, const double* c_prev,
               const double* wx, const double* wh, const double* b, int in_dim,
               int h_dim, double* gates, double* c_out, double* h_out) {
  // gate order: input, forget, candidate, output
  const int gh = 4 * h_dim;
  for (int r = 0; r < gh; ++r) {
    double acc = b[r];
    const double* wxr = wx + static_cast<int64_t>(r) * in_dim;
    for (int c = 0; c < in_dim; ++c) acc += wxr[c] * x[c];
    const double* whr = wh + static_cast<int64_t>(r) * h_dim;
    for (int c = 0; c < h_dim; ++c) acc += whr[c] * h_prev[c];
    gates[r] = acc;
  }
  for (int j = 0; j < h_dim; ++j) {
    const double i = sigmoid(gates[j]);
    const double f = sigmoid(gates[h_dim + j]);
    const double g = std::tanh(gates[2 * h_dim + j]);
    const double o = sigmoid(gates[3 * h_dim + j]);
    gates[j] = i;
    gates[h_dim + j] = f;
    gates[2 * h_dim + j] = g;
    gates[3 * h_dim + j] = o;
    c_out[j] = f * c_prev[j] + i * g;
    h_out[j] = o * std::tanh(c_out[j]);
  }
}

double bce_dprob(double p, double y) { return (p - y) / (p * (1.0 - p)); }

// d/dp of the symmetrized Bernoulli KL 0.5*D(p||q) + 0.5*D(q||p)
double sym_kl_dp(double p, double q) {
  return 0.5 * (std::log(p / q) - std::log((1.0 - p) / (1.0 - q))) +
         0.5 * (-q / p + (1.0 - q) / (1.0 - p));
}

}  // namespace

// --- config / params ----------------------------------------------------

void ArchConfig::validate() const {
  if (frame_size <= 0 || channels <= 0 || feature_dim <= 0 ||
      phase_feature_dim <= 0 || num_tools <= 0 || num_phases <= 0 ||
      clip_len <= 0)
    throw ConfigError("ArchConfig: all dimensions must be positive");
  if (encoder.empty()) throw ConfigError("ArchConfig: empty encoder spec");
  int ch = channels;
  int side = frame_size;
  for (size_t k = 0; k < encoder.size(); ++k) {
    const auto& st = encoder[k];
    if (st.out_channels <= 0 || st.stride <= 0)
      throw ConfigError("ArchConfig: encoder stage " + std::to_string(k) +
                        " has non-positive dims");
    if (st.residual && (st.stride != 1 || st.out_channels != ch))
      throw ConfigError(
          "ArchConfig: residual stages need stride 1 and matching channels");
    side = conv_out_dim(side, st.stride);
    if (side < 1)
      throw ConfigError("ArchConfig: frame_size too small for encoder depth");
    ch = st.out_channels;
  }
  if (ch != feature_dim)
    throw ConfigError(
        "ArchConfig: feature_dim must equal the last encoder stage channels");
}

const char* partition_name(Partition p) {
  switch (p) {
    case Partition::backbone: return "backbone";
    case Partition::tool_head: return "tool_head";
    case Partition::phase_head: return "phase_head";
    case Partition::mapping_cell: return "mapping_cell";
  }
  return "?";
}

bool PartitionMask::get(Partition p) const {
  switch (p) {
    case Partition::backbone: return backbone;
    case Partition::tool_head: return tool_head;
    case Partition::phase_head: return phase_head;
    case Partition::mapping_cell: return mapping_cell;
  }
  return false;
}

void PartitionMask::set(Partition p, bool v) {
  switch (p) {
    case Partition::backbone: backbone = v; break;
    case Partition::tool_head: tool_head = v; break;
    case Partition::phase_head: phase_head = v; break;
    case Partition::mapping_cell: mapping_cell = v; break;
  }
}

ParamSet& ModelParams::partition(Partition p) {
  switch (p) {
    case Partition::backbone: return backbone;
    case Partition::tool_head: return tool_head;
    case Partition::phase_head: return phase_head;
    case Partition::mapping_cell: return mapping_cell;
  }
  throw ConfigError("bad partition");
}

const ParamSet& ModelParams::partition(Partition p) const {
  return const_cast<ModelParams*>(this)->partition(p);
}

int64_t ModelParams::total_size() const {
  return backbone.total_size() + tool_head.total_size() +
         phase_head.total_size() + mapping_cell.total_size();
}

Grads zeros_like(const ModelParams& params) {
  Grads g;
  g.config = params.config;
  for (int pi = 0; pi < kNumPartitions; ++pi) {
    const auto part = static_cast<Partition>(pi);
    for (const auto& it : params.partition(part).items)
      g.partition(part).add(it.name, it.tensor.shape());
  }
  return g;
}

namespace {

void xavier_fill(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
}

}  // namespace

ModelParams init_parameters(const ArchConfig& config, uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  Rng rng(splitmix64(seed ^ 0x6d7472636e657431ULL));

  int in_ch = config.channels;
  for (size_t k = 0; k < config.encoder.size(); ++k) {
    const auto& st = config.encoder[k];
    const std::string prefix = "stage" + std::to_string(k) + "/";
    if (!st.residual) {
      Tensor& w = p.backbone.add(prefix + "conv/W",
                                 {st.out_channels, in_ch, 3, 3});
      xavier_fill(w, in_ch * 9, st.out_channels * 9, rng);
      p.backbone.add(prefix + "conv/b", {st.out_channels});
    } else {
      Tensor& w1 = p.backbone.add(prefix + "conv1/W",
                                  {st.out_channels, in_ch, 3, 3});
      xavier_fill(w1, in_ch * 9, st.out_channels * 9, rng);
      p.backbone.add(prefix + "conv1/b", {st.out_channels});
      Tensor& w2 = p.backbone.add(prefix + "conv2/W",
                                  {st.out_channels, st.out_channels, 3, 3});
      xavier_fill(w2, st.out_channels * 9, st.out_channels * 9, rng);
      p.backbone.add(prefix + "conv2/b", {st.out_channels});
    }
    in_ch = st.out_channels;
  }

  Tensor& wt = p.tool_head.add("W", {config.num_tools, config.feature_dim});
  xavier_fill(wt, config.feature_dim, config.num_tools, rng);
  p.tool_head.add("b", {config.num_tools});

  const int h = config.phase_feature_dim;
  Tensor& wx = p.phase_head.add("lstm/Wx", {4 * h, config.feature_dim});
  xavier_fill(wx, config.feature_dim, 4 * h, rng);
  Tensor& wh = p.phase_head.add("lstm/Wh", {4 * h, h});
  xavier_fill(wh, h, 4 * h, rng);
  Tensor& lb = p.phase_head.add("lstm/b", {4 * h});
  for (int j = 0; j < h; ++j) lb[h + j] = 1.0;  // forget-gate bias
  Tensor& wp = p.phase_head.add("fc/W", {config.num_phases, h});
  xavier_fill(wp, h, config.num_phases, rng);
  p.phase_head.add("fc/b", {config.num_phases});

  const int min = config.mapping_input_dim();
  Tensor& mw = p.mapping_cell.add("M/W", {config.num_tools, min});
  xavier_fill(mw, min, config.num_tools, rng);
  p.mapping_cell.add("M/b", {config.num_tools});
  if (config.mutual_mapping) {
    Tensor& m2 = p.mapping_cell.add("M2/W", {config.num_phases, config.num_tools});
    xavier_fill(m2, config.num_tools, config.num_phases, rng);
    p.mapping_cell.add("M2/b", {config.num_phases});
  }
  return p;
}

ModelParams init_parameters(const ArchConfig& config, uint64_t seed,
                            const std::string& backbone_weights_file) {
  ModelParams p = init_parameters(config, seed);
  load_partition_weights(backbone_weights_file, "backbone", p.backbone);
  return p;
}

void ClipBatch::validate(const ArchConfig& config) const {
  if (batch < 1 || n_f < 1) throw DimensionError("ClipBatch: empty batch/clip");
  if (channels != config.channels || height != config.frame_size ||
      width != config.frame_size)
    throw DimensionError("ClipBatch: frame shape does not match ArchConfig");
  const int64_t fn = static_cast<int64_t>(batch) * n_f;
  if (frames.size() != static_cast<size_t>(fn * frame_stride()))
    throw DimensionError("ClipBatch: frames size mismatch");
  if (tool_labels.size() != static_cast<size_t>(fn * config.num_tools))
    throw DimensionError("ClipBatch: tool_labels size mismatch");
  if (phase_labels.size() != static_cast<size_t>(fn))
    throw DimensionError("ClipBatch: phase_labels size mismatch");
  for (double v : frames)
    if (!std::isfinite(v)) throw NumericError("ClipBatch: non-finite pixel");
  for (uint8_t v : tool_labels)
    if (v > 1) throw ConfigError("ClipBatch: tool labels must be 0/1");
  for (int v : phase_labels)
    if (v < 0 || v >= config.num_phases)
      throw ConfigError("ClipBatch: phase label out of range");
}

// --- stand-alone ops -----------------------------------------------------

std::vector<double> encode_frames(const ClipBatch& clip,
                                  const ParamSet& backbone,
                                  const ArchConfig& config) {
  clip.validate(config);
  const auto dims = encoder_dims(config);
  std::vector<double> g(static_cast<int64_t>(clip.batch) * clip.n_f *
                        config.feature_dim);
  EncoderCache cache;
  for (int b = 0; b < clip.batch; ++b)
    for (int t = 0; t < clip.n_f; ++t)
      encode_frame(clip.frame(b, t), backbone, config, dims, cache,
                   g.data() + (static_cast<int64_t>(b) * clip.n_f + t) *
                                  config.feature_dim);
  return g;
}

std::vector<double> tool_head_forward(const std::vector<double>& features,
                                      int batch, int n_f,
                                      const ParamSet& tool_head,
                                      const ArchConfig& config) {
  const int d = config.feature_dim;
  const int tn = config.num_tools;
  if (features.size() != static_cast<size_t>(batch) * n_f * d)
    throw DimensionError("tool_head_forward: feature size mismatch");
  for (double v : features)
    if (!std::isfinite(v)) throw NumericError("tool_head_forward: non-finite feature");
  const Tensor& w = tool_head.at("W");
  const Tensor& b = tool_head.at("b");
  std::vector<double> probs(static_cast<int64_t>(batch) * n_f * tn);
  std::vector<double> u(tn);
  for (int64_t i = 0; i < static_cast<int64_t>(batch) * n_f; ++i) {
    affine(features.data() + i * d, w.data(), b.data(), tn, d, u.data());
    for (int c = 0; c < tn; ++c) probs[i * tn + c] = clamp_prob(sigmoid(u[c]));
  }
  return probs;
}

PhaseForward phase_head_forward(const std::vector<double>& features, int batch,
                                int n_f, const RecurrentState& state0,
                                const ParamSet& phase_head,
                                const ArchConfig& config) {
  const int d = config.feature_dim;
  const int h = config.phase_feature_dim;
  const int z = config.num_phases;
  if (features.size() != static_cast<size_t>(batch) * n_f * d)
    throw DimensionError("phase_head_forward: feature size mismatch");
  if (state0.batch != batch || state0.dim != h)
    throw DimensionError("phase_head_forward: state shape mismatch");
  const Tensor& wx = phase_head.at("lstm/Wx");
  const Tensor& wh = phase_head.at("lstm/Wh");
  const Tensor& lb = phase_head.at("lstm/b");
  const Tensor& wp = phase_head.at("fc/W");
  const Tensor& pb = phase_head.at("fc/b");

  PhaseForward out;
  out.phase_probs.resize(static_cast<int64_t>(batch) * n_f * z);
  out.phase_features.resize(static_cast<int64_t>(batch) * n_f * h);
  out.final_state = RecurrentState::zeros(batch, h);

  std::vector<double> gates(4 * h), cprev(h), hprev(h), ccur(h), v(z), p(z);
  for (int b = 0; b < batch; ++b) {
    std::copy(state0.hidden.begin() + static_cast<int64_t>(b) * h,
              state0.hidden.begin() + static_cast<int64_t>(b + 1) * h,
              hprev.begin());
    std::copy(state0.cell.begin() + static_cast<int64_t>(b) * h,
              state0.cell.begin() + static_cast<int64_t>(b + 1) * h,
              cprev.begin());
    for (int t = 0; t < n_f; ++t) {
      const int64_t ft = static_cast<int64_t>(b) * n_f + t;
      double* hcur = out.phase_features.data() + ft * h;
      lstm_step(features.data() + ft * d, hprev.data(), cprev.data(), wx.data(),
                wh.data(), lb.data(), d, h, gates.data(), ccur.data(), hcur);
      affine(hcur, wp.data(), pb.data(), z, h, v.data());
      softmax(v.data(), z, p.data());
      for (int j = 0; j < z; ++j)
        out.phase_probs[ft * z + j] = clamp_prob(p[j]);
      std::copy(hcur, hcur + h, hprev.begin());
      std::copy(ccur.begin(), ccur.end(), cprev.begin());
    }
    std::copy(hprev.begin(), hprev.end(),
              out.final_state.hidden.begin() + static_cast<int64_t>(b) * h);
    std::copy(cprev.begin(), cprev.end(),
              out.final_state.cell.begin() + static_cast<int64_t>(b) * h);
  }
  return out;
}

std::vector<double> map_phase_features(const std::vector<double>& mapping_input,
                                       int batch, int n_f,
                                       const ParamSet& mapping_cell,
                                       const ArchConfig& config) {
  const int in_dim = config.mapping_input_dim();
  const int tn = config.num_tools;
  if (mapping_input.size() != static_cast<size_t>(batch) * n_f * in_dim)
    throw DimensionError("map_phase_features: input size mismatch");
  const Tensor& w = mapping_cell.at("M/W");
  const Tensor& b = mapping_cell.at("M/b");
  if (w.shape() != std::vector<int>{tn, in_dim})
    throw DimensionError("map_phase_features: mapping matrix shape mismatch");
  std::vector<double> priors(static_cast<int64_t>(batch) * n_f * tn);
  std::vector<double> m(tn);
  for (int64_t i = 0; i < static_cast<int64_t>(batch) * n_f; ++i) {
    affine(mapping_input.data() + i * in_dim, w.data(), b.data(), tn, in_dim,
           m.data());
    for (int c = 0; c < tn; ++c) priors[i * tn + c] = clamp_prob(sigmoid(m[c]));
  }
  return priors;
}

namespace {

std::vector<double> mutual_priors(const std::vector<double>& tool_probs,
                                  int batch, int n_f,
                                  const ParamSet& mapping_cell,
                                  const ArchConfig& config) {
  const int tn = config.num_tools;
  const int z = config.num_phases;
  const Tensor& w = mapping_cell.at("M2/W");
  const Tensor& b = mapping_cell.at("M2/b");
  std::vector<double> priors(static_cast<int64_t>(batch) * n_f * z);
  std::vector<double> v(z), p(z);
  for (int64_t i = 0; i < static_cast<int64_t>(batch) * n_f; ++i) {
    affine(tool_probs.data() + i * tn, w.data(), b.data(), z, tn, v.data());
    softmax(v.data(), z, p.data());
    for (int j = 0; j < z; ++j) priors[i * z + j] = clamp_prob(p[j]);
  }
  return priors;
}

}  // namespace

JointPrediction forward(const ClipBatch& clip, const ModelParams& params) {
  const ArchConfig& cfg = params.config;
  JointPrediction pred;
  pred.batch = clip.batch;
  pred.n_f = clip.n_f;
  pred.num_tools = cfg.num_tools;
  pred.num_phases = cfg.num_phases;
  pred.phase_feature_dim = cfg.phase_feature_dim;

  auto g = encode_frames(clip, params.backbone, cfg);
  pred.tool_probs =
      tool_head_forward(g, clip.batch, clip.n_f, params.tool_head, cfg);
  auto ph = phase_head_forward(
      g, clip.batch, clip.n_f,
      RecurrentState::zeros(clip.batch, cfg.phase_feature_dim),
      params.phase_head, cfg);
  pred.phase_probs = std::move(ph.phase_probs);
  pred.phase_features = std::move(ph.phase_features);
  const auto& mapping_input = cfg.mapping_source == MappingSource::phase_features
                                  ? pred.phase_features
                                  : pred.phase_probs;
  pred.tool_priors = map_phase_features(mapping_input, clip.batch, clip.n_f,
                                        params.mapping_cell, cfg);
  if (cfg.mutual_mapping)
    pred.phase_priors = mutual_priors(pred.tool_probs, clip.batch, clip.n_f,
                                      params.mapping_cell, cfg);
  return pred;
}

// --- fused training path -------------------------------------------------

namespace {

struct ClipScratch {
  std::vector<EncoderCache> enc;
  std::vector<double> g;                       // [N][D]
  std::vector<double> gates;                   // [N][4h]
  std::vector<double> cvals;                   // [N][h]
  std::vector<double> tool_raw, phase_raw;     // [N][7] unclamped
  std::vector<double> prior_raw, mutual_raw;   // [N][7]
};

void forward_clip(const ClipBatch& clip, int b, const ModelParams& params,
                  const std::vector<StageDims>& dims, ClipScratch& s,
                  JointPrediction& pred) {
  const ArchConfig& cfg = params.config;
  const int n = clip.n_f;
  const int d = cfg.feature_dim;
  const int h = cfg.phase_feature_dim;
  const int tn = cfg.num_tools;
  const int z = cfg.num_phases;

  s.enc.resize(n);
  s.g.resize(static_cast<int64_t>(n) * d);
  s.gates.resize(static_cast<int64_t>(n) * 4 * h);
  s.cvals.resize(static_cast<int64_t>(n) * h);
  s.tool_raw.resize(static_cast<int64_t>(n) * tn);
  s.phase_raw.resize(static_cast<int64_t>(n) * z);
  s.prior_raw.resize(static_cast<int64_t>(n) * tn);
  if (cfg.mutual_mapping) s.mutual_raw.resize(static_cast<int64_t>(n) * z);

  const Tensor& wt = params.tool_head.at("W");
  const Tensor& bt = params.tool_head.at("b");
  const Tensor& wx = params.phase_head.at("lstm/Wx");
  const Tensor& wh = params.phase_head.at("lstm/Wh");
  const Tensor& lb = params.phase_head.at("lstm/b");
  const Tensor& wp = params.phase_head.at("fc/W");
  const Tensor& pb = params.phase_head.at("fc/b");
  const Tensor& mw = params.mapping_cell.at("M/W");
  const Tensor& mb = params.mapping_cell.at("M/b");

  std::vector<double> hprev(h, 0.0), cprev(h, 0.0);
  std::vector<double> u(tn), v(z), m(tn);
  const int in_dim = cfg.mapping_input_dim();

  for (int t = 0; t < n; ++t) {
    const int64_t ft = static_cast<int64_t>(b) * n + t;
    double* gt = s.g.data() + static_cast<int64_t>(t) * d;
    encode_frame(clip.frame(b, t), params.backbone, cfg, dims, s.enc[t], gt);

    // tool branch (frame-wise)
    affine(gt, wt.data(), bt.data(), tn, d, u.data());
    for (int c = 0; c < tn; ++c) {
      const double pr = sigmoid(u[c]);
      s.tool_raw[static_cast<int64_t>(t) * tn + c] = pr;
      pred.tool_probs[ft * tn + c] = clamp_prob(pr);
    }

    // phase branch
    double* hcur = pred.phase_features.data() + ft * h;
    double* ccur = s.cvals.data() + static_cast<int64_t>(t) * h;
    lstm_step(gt, hprev.data(), cprev.data(), wx.data(), wh.data(), lb.data(),
              d, h, s.gates.data() + static_cast<int64_t>(t) * 4 * h, ccur,
              hcur);
    affine(hcur, wp.data(), pb.data(), z, h, v.data());
    softmax(v.data(), z, s.phase_raw.data() + static_cast<int64_t>(t) * z);
    for (int j = 0; j < z; ++j)
      pred.phase_probs[ft * z + j] =
          clamp_prob(s.phase_raw[static_cast<int64_t>(t) * z + j]);
    std::copy(hcur, hcur + h, hprev.begin());
    std::copy(ccur, ccur + h, cprev.begin());

    // mapping cell
    const double* min_in = cfg.mapping_source == MappingSource::phase_features
                               ? hcur
                               : pred.phase_probs.data() + ft * z;
    affine(min_in, mw.data(), mb.data(), tn, in_dim, m.data());
    for (int c = 0; c < tn; ++c) {
      const double pr = sigmoid(m[c]);
      s.prior_raw[static_cast<int64_t>(t) * tn + c] = pr;
      pred.tool_priors[ft * tn + c] = clamp_prob(pr);
    }

    if (cfg.mutual_mapping) {
      const Tensor& m2 = params.mapping_cell.at("M2/W");
      const Tensor& b2 = params.mapping_cell.at("M2/b");
      affine(pred.tool_probs.data() + ft * tn, m2.data(), b2.data(), z, tn,
             v.data());
      softmax(v.data(), z, s.mutual_raw.data() + static_cast<int64_t>(t) * z);
      for (int j = 0; j < z; ++j)
        pred.phase_priors[ft * z + j] =
            clamp_prob(s.mutual_raw[static_cast<int64_t>(t) * z + j]);
    }
  }
}

void backward_clip(const ClipBatch& clip, int b, const ModelParams& params,
                   const std::vector<StageDims>& dims, const ClipScratch& s,
                   const JointPrediction& pred, const Lambdas& lambdas,
                   const ActiveLosses& active, const PartitionMask& trainable,
                   Grads& grads) {
  const ArchConfig& cfg = params.config;
  const int n = clip.n_f;
  const int d = cfg.feature_dim;
  const int h = cfg.phase_feature_dim;
  const int tn = cfg.num_tools;
  const int z = cfg.num_phases;
  const double scale = 1.0 / (static_cast<double>(clip.batch) * n);
  const bool features_mode =
      cfg.mapping_source == MappingSource::phase_features;
  const bool need_bptt = trainable.phase_head || trainable.backbone;
  const bool need_enc = trainable.backbone;

  const Tensor& wt = params.tool_head.at("W");
  const Tensor& wx = params.phase_head.at("lstm/Wx");
  const Tensor& wh = params.phase_head.at("lstm/Wh");
  const Tensor& wp = params.phase_head.at("fc/W");
  const Tensor& mw = params.mapping_cell.at("M/W");

  Tensor* dwt = trainable.tool_head ? &grads.tool_head.at("W") : nullptr;
  Tensor* dbt = trainable.tool_head ? &grads.tool_head.at("b") : nullptr;
  Tensor* dwp = trainable.phase_head ? &grads.phase_head.at("fc/W") : nullptr;
  Tensor* dpb = trainable.phase_head ? &grads.phase_head.at("fc/b") : nullptr;
  Tensor* dmw = trainable.mapping_cell ? &grads.mapping_cell.at("M/W") : nullptr;
  Tensor* dmb = trainable.mapping_cell ? &grads.mapping_cell.at("M/b") : nullptr;

  std::vector<double> dg(static_cast<int64_t>(n) * d, 0.0);
  std::vector<double> dr(static_cast<int64_t>(n) * h, 0.0);

  std::vector<double> dphat(tn), dptilde(tn), dpphase(z), dq(z);
  std::vector<double> du(tn), dm(tn), dv(z), dw2(z);

  for (int t = 0; t < n; ++t) {
    const int64_t ft = static_cast<int64_t>(b) * n + t;
    const double* phat = pred.tool_probs.data() + ft * tn;
    const double* ptilde = pred.tool_priors.data() + ft * tn;
    const double* pphase = pred.phase_probs.data() + ft * z;
    const uint8_t* ty = clip.tool_labels.data() + ft * tn;
    const int py = clip.phase_labels[ft];

    std::fill(dphat.begin(), dphat.end(), 0.0);
    std::fill(dptilde.begin(), dptilde.end(), 0.0);
    std::fill(dpphase.begin(), dpphase.end(), 0.0);

    if (active.tool)
      for (int c = 0; c < tn; ++c)
        dphat[c] += scale * bce_dprob(phat[c], ty[c]);
    if (active.mapped_tool)
      for (int c = 0; c < tn; ++c)
        dptilde[c] += scale * bce_dprob(ptilde[c], ty[c]);
    if (active.phase) dpphase[py] -= lambdas.l1 * scale / pphase[py];
    if (active.corr) {
      for (int c = 0; c < tn; ++c) {
        dphat[c] += lambdas.l2 * scale * sym_kl_dp(phat[c], ptilde[c]);
        dptilde[c] += lambdas.l2 * scale * sym_kl_dp(ptilde[c], phat[c]);
      }
      if (cfg.mutual_mapping) {
        const double* q = pred.phase_priors.data() + ft * z;
        for (int j = 0; j < z; ++j) {
          dpphase[j] += lambdas.l2 * scale *
                        (0.5 * (std::log(pphase[j] / q[j]) + 1.0) -
                         0.5 * q[j] / pphase[j]);
          dq[j] = lambdas.l2 * scale *
                  (0.5 * (std::log(q[j] / pphase[j]) + 1.0) -
                   0.5 * pphase[j] / q[j]);
        }
      }
    }

    // mapping cell: dm, plus upstream into r or phase probs
    for (int c = 0; c < tn; ++c)
      dm[c] = dptilde[c] *
              sigmoid_clamp_factor(s.prior_raw[static_cast<int64_t>(t) * tn + c]);
    const double* map_in = features_mode
                               ? pred.phase_features.data() + ft * h
                               : pphase;
    const int in_dim = cfg.mapping_input_dim();
    if (dmw) {
      affine_backward(map_in, mw.data(), dm.data(), tn, in_dim, dmw->data(),
                      dmb->data(), nullptr);
    }
    if (features_mode) {
      if (need_bptt)
        for (int c = 0; c < tn; ++c)
          for (int j = 0; j < h; ++j)
            dr[static_cast<int64_t>(t) * h + j] += mw[c * in_dim + j] * dm[c];
    } else {
      for (int c = 0; c < tn; ++c)
        for (int j = 0; j < z; ++j) dpphase[j] += mw[c * in_dim + j] * dm[c];
    }

    // mutual mapping: softmax head over M2 * tool_probs
    if (cfg.mutual_mapping && active.corr) {
      const Tensor& m2 = params.mapping_cell.at("M2/W");
      softmax_backward(s.mutual_raw.data() + static_cast<int64_t>(t) * z,
                       dq.data(), z, dw2.data());
      if (trainable.mapping_cell) {
        affine_backward(phat, m2.data(), dw2.data(), z, tn,
                        grads.mapping_cell.at("M2/W").data(),
                        grads.mapping_cell.at("M2/b").data(), nullptr);
      }
      for (int j = 0; j < z; ++j)
        for (int c = 0; c < tn; ++c) dphat[c] += m2[j * tn + c] * dw2[j];
    }

    // tool branch
    const bool need_du = trainable.tool_head || need_enc;
    if (need_du) {
      for (int c = 0; c < tn; ++c)
        du[c] = dphat[c] *
                sigmoid_clamp_factor(s.tool_raw[static_cast<int64_t>(t) * tn + c]);
      const double* gt = s.g.data() + static_cast<int64_t>(t) * d;
      if (dwt) {
        affine_backward(gt, wt.data(), du.data(), tn, d, dwt->data(),
                        dbt->data(), need_enc ? dg.data() + static_cast<int64_t>(t) * d
                                              : nullptr);
      } else if (need_enc) {
        for (int c = 0; c < tn; ++c)
          for (int j = 0; j < d; ++j)
            dg[static_cast<int64_t>(t) * d + j] += wt[c * d + j] * du[c];
      }
    }

    // phase classifier
    if (need_bptt) {
      softmax_backward(s.phase_raw.data() + static_cast<int64_t>(t) * z,
                       dpphase.data(), z, dv.data());
      const double* rt = pred.phase_features.data() + ft * h;
      if (dwp) {
        affine_backward(rt, wp.data(), dv.data(), z, h, dwp->data(),
                        dpb->data(), dr.data() + static_cast<int64_t>(t) * h);
      } else {
        for (int j = 0; j < z; ++j)
          for (int k = 0; k < h; ++k)
            dr[static_cast<int64_t>(t) * h + k] += wp[j * h + k] * dv[j];
      }
    }
  }

  // backprop through time
  if (need_bptt) {
    Tensor* dwx = trainable.phase_head ? &grads.phase_head.at("lstm/Wx") : nullptr;
    Tensor* dwh = trainable.phase_head ? &grads.phase_head.at("lstm/Wh") : nullptr;
    Tensor* dlb = trainable.phase_head ? &grads.phase_head.at("lstm/b") : nullptr;
    std::vector<double> dh_next(h, 0.0), dc_next(h, 0.0), dpre(4 * h);
    for (int t = n - 1; t >= 0; --t) {
      const int64_t ft = static_cast<int64_t>(b) * n + t;
      const double* gate = s.gates.data() + static_cast<int64_t>(t) * 4 * h;
      const double* ct = s.cvals.data() + static_cast<int64_t>(t) * h;
      const double* cprev =
          t > 0 ? s.cvals.data() + static_cast<int64_t>(t - 1) * h : nullptr;
      const double* hprev =
          t > 0 ? pred.phase_features.data() + (ft - 1) * h : nullptr;
      for (int j = 0; j < h; ++j) {
        const double gi = gate[j];
        const double gf = gate[h + j];
        const double gg = gate[2 * h + j];
        const double go = gate[3 * h + j];
        const double tc = std::tanh(ct[j]);
        const double dh = dr[static_cast<int64_t>(t) * h + j] + dh_next[j];
        const double dgo = dh * tc;
        double dc = dc_next[j] + dh * go * (1.0 - tc * tc);
        const double di = dc * gg;
        const double dgg = dc * gi;
        const double cp = cprev ? cprev[j] : 0.0;
        const double df = dc * cp;
        dc_next[j] = dc * gf;
        dpre[j] = di * gi * (1.0 - gi);
        dpre[h + j] = df * gf * (1.0 - gf);
        dpre[2 * h + j] = dgg * (1.0 - gg * gg);
        dpre[3 * h + j] = dgo * go * (1.0 - go);
      }
      const double* xt = s.g.data() + static_cast<int64_t>(t) * d;
      std::fill(dh_next.begin(), dh_next.end(), 0.0);
      for (int r = 0; r < 4 * h; ++r) {
        const double gpre = dpre[r];
        if (dwx) {
          double* dwxr = dwx->data() + static_cast<int64_t>(r) * d;
          for (int c = 0; c < d; ++c) dwxr[c] += gpre * xt[c];
          double* dwhr = dwh->data() + static_cast<int64_t>(r) * h;
          if (hprev)
            for (int c = 0; c < h; ++c) dwhr[c] += gpre * hprev[c];
          (*dlb)[r] += gpre;
        }
        if (need_enc) {
          const double* wxr = wx.data() + static_cast<int64_t>(r) * d;
          for (int c = 0; c < d; ++c)
            dg[static_cast<int64_t>(t) * d + c] += gpre * wxr[c];
        }
        const double* whr = wh.data() + static_cast<int64_t>(r) * h;
        for (int c = 0; c < h; ++c) dh_next[c] += gpre * whr[c];
      }
    }
  }

  if (need_enc)
    for (int t = 0; t < n; ++t)
      encoder_backward(s.enc[t], params.backbone, cfg, dims,
                       dg.data() + static_cast<int64_t>(t) * d, grads.backbone);
}

void parallel_clips(int batch, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, batch));
  if (threads == 1) {
    for (int b = 0; b < batch; ++b) fn(b);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      for (int b = w; b < batch; b += threads) fn(b);
    });
  for (auto& th : pool) th.join();
}

void accumulate(ModelParams& into, const ModelParams& from) {
  for (int pi = 0; pi < kNumPartitions; ++pi) {
    auto part = static_cast<Partition>(pi);
    auto& dst = into.partition(part);
    const auto& src = from.partition(part);
    for (size_t i = 0; i < dst.items.size(); ++i) {
      Tensor& a = dst.items[i].tensor;
      const Tensor& c = src.items[i].tensor;
      for (int64_t j = 0; j < a.size(); ++j) a[j] += c[j];
    }
  }
}

}  // namespace

BatchEval evaluate_batch(const ClipBatch& clip, const ModelParams& params,
                         const Lambdas& lambdas, const ActiveLosses& active,
                         const PartitionMask& trainable, Grads* grads,
                         int threads) {
  const ArchConfig& cfg = params.config;
  clip.validate(cfg);
  const auto dims = encoder_dims(cfg);

  BatchEval ev;
  JointPrediction& pred = ev.pred;
  pred.batch = clip.batch;
  pred.n_f = clip.n_f;
  pred.num_tools = cfg.num_tools;
  pred.num_phases = cfg.num_phases;
  pred.phase_feature_dim = cfg.phase_feature_dim;
  const int64_t fn = static_cast<int64_t>(clip.batch) * clip.n_f;
  pred.tool_probs.resize(fn * cfg.num_tools);
  pred.phase_probs.resize(fn * cfg.num_phases);
  pred.phase_features.resize(fn * cfg.phase_feature_dim);
  pred.tool_priors.resize(fn * cfg.num_tools);
  if (cfg.mutual_mapping) pred.phase_priors.resize(fn * cfg.num_phases);

  std::vector<Grads> clip_grads;
  if (grads) {
    clip_grads.reserve(clip.batch);
    for (int b = 0; b < clip.batch; ++b) clip_grads.push_back(zeros_like(params));
  }

  parallel_clips(clip.batch, threads, [&](int b) {
    ClipScratch scratch;
    forward_clip(clip, b, params, dims, scratch, pred);
    if (grads)
      backward_clip(clip, b, params, dims, scratch, pred, lambdas, active,
                    trainable, clip_grads[b]);
  });

  if (grads) {
    for (int b = 0; b < clip.batch; ++b) accumulate(*grads, clip_grads[b]);
  }

  const double lt =
      active.mapped_tool
          ? losses::tool_loss(pred.tool_priors, clip.tool_labels, clip.batch,
                              clip.n_f, cfg.num_tools)
          : losses::tool_loss(pred.tool_probs, clip.tool_labels, clip.batch,
                              clip.n_f, cfg.num_tools);
  const double lp = losses::phase_loss(pred.phase_probs, clip.phase_labels,
                                       clip.batch, clip.n_f, cfg.num_phases);
  double lco = losses::correlation_loss(pred.tool_probs, pred.tool_priors,
                                        clip.batch, clip.n_f, cfg.num_tools);
  if (cfg.mutual_mapping) {
    double extra = 0.0;
    for (int64_t i = 0; i < fn; ++i)
      extra += losses::categorical_sym_kl(
          pred.phase_probs.data() + i * cfg.num_phases,
          pred.phase_priors.data() + i * cfg.num_phases, cfg.num_phases);
    lco += extra / static_cast<double>(fn);
  }
  const double decay = losses::weight_decay_sum(params, trainable);
  ev.breakdown = losses::total_loss(lt, lp, lco, decay, lambdas, active);
  return ev;
}

void apply_decay_gradient(const ModelParams& params,
                          const PartitionMask& trainable, double l3,
                          Grads& grads) {
  for (int pi = 0; pi < kNumPartitions; ++pi) {
    const auto part = static_cast<Partition>(pi);
    if (!trainable.get(part)) continue;
    const auto& src = params.partition(part);
    auto& dst = grads.partition(part);
    for (size_t i = 0; i < src.items.size(); ++i) {
      const Tensor& w = src.items[i].tensor;
      Tensor& gw = dst.items[i].tensor;
      for (int64_t j = 0; j < w.size(); ++j) gw[j] += 2.0 * l3 * w[j];
    }
  }
}

// --- streaming inference -------------------------------------------------

StreamingPredictor::StreamingPredictor(const ModelParams& params)
    : params_(params),
      state_(RecurrentState::zeros(1, params.config.phase_feature_dim)) {}

void StreamingPredictor::reset() {
  state_ = RecurrentState::zeros(1, params_.config.phase_feature_dim);
}

StreamingPredictor::FrameOutput StreamingPredictor::step(const double* frame) {
  const ArchConfig& cfg = params_.config;
  const auto dims = encoder_dims(cfg);
  const int d = cfg.feature_dim;
  const int h = cfg.phase_feature_dim;
  const int tn = cfg.num_tools;
  const int z = cfg.num_phases;

  EncoderCache cache;
  std::vector<double> g(d);
  encode_frame(frame, params_.backbone, cfg, dims, cache, g.data());

  FrameOutput out;
  out.tool_probs.resize(tn);
  out.phase_probs.resize(z);
  out.tool_priors.resize(tn);

  std::vector<double> u(tn);
  affine(g.data(), params_.tool_head.at("W").data(),
         params_.tool_head.at("b").data(), tn, d, u.data());
  for (int c = 0; c < tn; ++c) out.tool_probs[c] = clamp_prob(sigmoid(u[c]));

  std::vector<double> gates(4 * h), cnew(h), hnew(h);
  lstm_step(g.data(), state_.hidden.data(), state_.cell.data(),
            params_.phase_head.at("lstm/Wx").data(),
            params_.phase_head.at("lstm/Wh").data(),
            params_.phase_head.at("lstm/b").data(), d, h, gates.data(),
            cnew.data(), hnew.data());
  std::vector<double> v(z), p(z);
  affine(hnew.data(), params_.phase_head.at("fc/W").data(),
         params_.phase_head.at("fc/b").data(), z, h, v.data());
  softmax(v.data(), z, p.data());
  for (int j = 0; j < z; ++j) out.phase_probs[j] = clamp_prob(p[j]);

  const double* map_in = cfg.mapping_source == MappingSource::phase_features
                             ? hnew.data()
                             : out.phase_probs.data();
  std::vector<double> m(tn);
  affine(map_in, params_.mapping_cell.at("M/W").data(),
         params_.mapping_cell.at("M/b").data(), tn, cfg.mapping_input_dim(),
         m.data());
  for (int c = 0; c < tn; ++c) out.tool_priors[c] = clamp_prob(sigmoid(m[c]));

  std::copy(hnew.begin(), hnew.end(), state_.hidden.begin());
  std::copy(cnew.begin(), cnew.end(), state_.cell.begin());
  return out;
}

void for_each_value(ModelParams& p, const std::function<void(double&)>& fn) {
  for (int pi = 0; pi < kNumPartitions; ++pi)
    for (auto& it : p.partition(static_cast<Partition>(pi)).items)
      for (int64_t j = 0; j < it.tensor.size(); ++j) fn(it.tensor[j]);
}

void for_each_value(const ModelParams& p,
                    const std::function<void(double)>& fn) {
  for (int pi = 0; pi < kNumPartitions; ++pi)
    for (const auto& it : p.partition(static_cast<Partition>(pi)).items)
      for (int64_t j = 0; j < it.tensor.size(); ++j) fn(it.tensor[j]);
}

bool all_finite(const ModelParams& p) {
  bool ok = true;
  for_each_value(p, [&](double v) {
    if (!std::isfinite(v)) ok = false;
  });
  return ok;
}

}  // namespace mtrc
