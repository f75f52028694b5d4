#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtrc/model.hpp"

namespace mtrc {

// Canonical Cholec80 names; ingestion accepts custom mappings to absorb
// per-release header variation.
extern const std::array<const char*, 7> kPhaseNames;
extern const std::array<const char*, 7> kToolNames;

// Generative description of one synthetic procedure: a fixed phase order with
// random durations and a phase-conditional tool presence process.
struct WorkflowSpec {
  int num_phases = 7;
  int num_tools = 7;
  int frame_size = 32;
  int channels = 3;
  // per-phase inclusive (min, max) duration in frames at 1 fps
  std::vector<std::array<int, 2>> duration_range;
  // P(tool c present | phase z), indexed [tool][phase]
  std::vector<std::vector<double>> tool_given_phase;
  double tool_persistence = 6.0;  // expected presence run length in frames
  double noise_level = 0.08;      // additive pixel noise std dev
  double illumination_jitter = 0.1;  // per-frame global brightness jitter
  // background style per phase; aliasing two phases to one style makes them
  // indistinguishable from the background alone
  std::vector<int> background_styles;
  double train_ratio = 0.5;

  static WorkflowSpec defaults();
  void validate() const;
};

nlohmann::json workflow_spec_to_json(const WorkflowSpec& spec);
WorkflowSpec workflow_spec_from_json(const nlohmann::json& j);

struct VideoRecord {
  std::string video_id;
  int length = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> frames;        // [len][C][H][W]
  std::vector<int> phase_labels;     // [len]
  std::vector<uint8_t> tool_labels;  // [len][num_tools]

  int64_t frame_stride() const {
    return static_cast<int64_t>(channels) * height * width;
  }
  const double* frame(int t) const {
    return frames.data() + t * frame_stride();
  }
};

struct DatasetSplit {
  std::vector<std::string> train_videos;
  std::vector<std::string> test_videos;
};

// Each of the num_phases phases appears exactly once, in order, with duration
// drawn uniformly from its range.
std::vector<int> generate_workflow(const WorkflowSpec& spec, uint64_t seed);

// Two-state renewal process per tool whose stationary presence probability in
// phase z is tool_given_phase[c][z]; the state is re-drawn from the
// stationary distribution at phase boundaries. Returns [len][num_tools].
std::vector<uint8_t> sample_tools(const std::vector<int>& phase_seq,
                                  const WorkflowSpec& spec, uint64_t seed);

// Procedural frame: a phase-styled background plus one glyph per present
// tool at a jittered position, plus additive noise. out is [C][H][W].
void render_frame(int phase, const uint8_t* tools, const WorkflowSpec& spec,
                  uint64_t seed, double* out);

VideoRecord generate_video(const WorkflowSpec& spec, const std::string& id,
                           uint64_t seed);

// Writes per-video frame containers plus Cholec80-style annotation files and
// a dataset manifest; returns the train/test split. phase_fps > 1 upsamples
// the phase file the way 25 fps sources look on disk.
DatasetSplit generate_dataset(const WorkflowSpec& spec, int num_videos,
                              const std::string& out_dir, uint64_t seed,
                              int phase_fps = 1);

// --- ingestion -----------------------------------------------------------

struct AlignedLabels {
  std::vector<int> phase_labels;     // at 1 fps
  std::vector<uint8_t> tool_labels;  // [len][num_tools]
  std::vector<int> frame_indices;    // original frame index per kept row
  int dropped = 0;                   // phase frames without a tool row
};

// Subsamples the phase file by taking original indices 0, fps_phase,
// 2*fps_phase, ... and joins tool rows on the original frame index.
AlignedLabels load_annotations(
    const std::string& phase_file, const std::string& tool_file, int fps_phase,
    int fps_tool,
    const std::map<std::string, int>* phase_name_to_id = nullptr,
    const std::vector<std::string>* tool_columns = nullptr);

// Frame container:
//   magic "VFRM" | u32 version=1 | u32 frames | u32 channels | u32 H | u32 W
//   then frames * C * H * W little-endian float32 pixel values.
void write_frame_container(const std::string& path, const VideoRecord& video);
VideoRecord read_frame_container(const std::string& path);

struct LoadedDataset {
  WorkflowSpec spec;
  std::vector<VideoRecord> videos;  // sorted by video_id
  DatasetSplit split;

  const VideoRecord& video(const std::string& id) const;
};

LoadedDataset load_dataset(const std::string& dir);

// --- clip extraction and augmentation ------------------------------------

// Window start indices for sliding windows of clip_len at `stride`; the tail
// shorter than clip_len is dropped. Empty when clip_len > length.
std::vector<int> clip_starts(int video_length, int clip_len, int stride);

// One single-clip ClipBatch per window.
std::vector<ClipBatch> make_clips(const VideoRecord& video, int clip_len,
                                  int stride);

struct AugmentParams {
  int dx = 0;
  int dy = 0;
  bool mirror = false;
};

// The same crop offset and mirror decision is used for every frame of a clip.
AugmentParams sample_augment(int frame_size, int crop_size, Rng& rng);

// src is [C][H][W]; dst is [C][crop][crop].
void apply_augment(const double* src, int channels, int height, int width,
                   const AugmentParams& params, int crop_size, double* dst);

// Center crop used at inference time.
void center_crop(const double* src, int channels, int height, int width,
                 int crop_size, double* dst);

// Deterministic single-frame augmentation.
std::vector<double> augment_frame(const double* src, int channels, int height,
                                  int width, int crop_size, uint64_t seed);

}  // namespace mtrc
