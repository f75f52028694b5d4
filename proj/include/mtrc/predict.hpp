#pragma once

#include <string>
#include <vector>

#include "mtrc/metrics.hpp"
#include "mtrc/model.hpp"
#include "mtrc/synth.hpp"

namespace mtrc {

// Streams one video causally at 1 fps: the recurrent state is carried across
// the whole video and frames are center-cropped to the model frame size.
std::vector<PredictionRecord> predict_video(const ModelParams& params,
                                            const VideoRecord& video);

// Predicts every video in `video_ids` (sorted), e.g. the test split.
std::vector<PredictionRecord> predict_videos(
    const ModelParams& params, const LoadedDataset& data,
    const std::vector<std::string>& video_ids);

}  // namespace mtrc
