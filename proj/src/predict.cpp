#include "mtrc/predict.hpp"

#include <algorithm>

namespace mtrc {

std::vector<PredictionRecord> predict_video(const ModelParams& params,
                                            const VideoRecord& video) {
  const ArchConfig& cfg = params.config;
  if (video.channels != cfg.channels)
    throw DimensionError("predict_video: channel mismatch");
  if (video.height < cfg.frame_size || video.width < cfg.frame_size)
    throw DimensionError("predict_video: frames smaller than the model input");

  StreamingPredictor predictor(params);
  std::vector<double> cropped(static_cast<int64_t>(cfg.channels) *
                              cfg.frame_size * cfg.frame_size);
  std::vector<PredictionRecord> records;
  records.reserve(video.length);
  for (int t = 0; t < video.length; ++t) {
    center_crop(video.frame(t), video.channels, video.height, video.width,
                cfg.frame_size, cropped.data());
    auto out = predictor.step(cropped.data());
    PredictionRecord r;
    r.video_id = video.video_id;
    r.frame_idx = t;
    r.phase_probs = std::move(out.phase_probs);
    r.phase_pred = argmax_lowest_tie(r.phase_probs.data(), cfg.num_phases);
    r.tool_probs = std::move(out.tool_probs);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<PredictionRecord> predict_videos(
    const ModelParams& params, const LoadedDataset& data,
    const std::vector<std::string>& video_ids) {
  std::vector<std::string> ids = video_ids;
  std::sort(ids.begin(), ids.end());
  std::vector<PredictionRecord> all;
  for (const auto& id : ids) {
    auto recs = predict_video(params, data.video(id));
    all.insert(all.end(), std::make_move_iterator(recs.begin()),
               std::make_move_iterator(recs.end()));
  }
  return all;
}

}  // namespace mtrc
