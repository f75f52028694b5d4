#include "mtrc/serialize.hpp"

namespace mtrc {

using nlohmann::json;

json arch_config_to_json(const ArchConfig& cfg) {
  json stages = json::array();
  for (const auto& st : cfg.encoder)
    stages.push_back({{"channels", st.out_channels},
                      {"stride", st.stride},
                      {"residual", st.residual}});
  return json{
      {"frame_size", cfg.frame_size},
      {"channels", cfg.channels},
      {"feature_dim", cfg.feature_dim},
      {"phase_feature_dim", cfg.phase_feature_dim},
      {"num_tools", cfg.num_tools},
      {"num_phases", cfg.num_phases},
      {"clip_len", cfg.clip_len},
      {"encoder", stages},
      {"mapping_source", cfg.mapping_source == MappingSource::phase_features
                             ? "phase_features"
                             : "phase_labels"},
      {"mutual_mapping", cfg.mutual_mapping},
      {"activation", cfg.activation == Activation::relu ? "relu" : "tanh"},
  };
}

ArchConfig arch_config_from_json(const json& j) {
  ArchConfig cfg;
  cfg.frame_size = j.value("frame_size", cfg.frame_size);
  cfg.channels = j.value("channels", cfg.channels);
  cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
  cfg.phase_feature_dim = j.value("phase_feature_dim", cfg.phase_feature_dim);
  cfg.num_tools = j.value("num_tools", cfg.num_tools);
  cfg.num_phases = j.value("num_phases", cfg.num_phases);
  cfg.clip_len = j.value("clip_len", cfg.clip_len);
  if (j.contains("encoder")) {
    cfg.encoder.clear();
    for (const auto& st : j.at("encoder"))
      cfg.encoder.push_back({st.at("channels").get<int>(),
                             st.value("stride", 1), st.value("residual", false)});
  }
  const std::string src = j.value("mapping_source", "phase_features");
  if (src == "phase_features")
    cfg.mapping_source = MappingSource::phase_features;
  else if (src == "phase_labels")
    cfg.mapping_source = MappingSource::phase_labels;
  else
    throw ConfigError("unknown mapping_source: " + src);
  cfg.mutual_mapping = j.value("mutual_mapping", cfg.mutual_mapping);
  const std::string act = j.value("activation", "tanh");
  if (act == "tanh")
    cfg.activation = Activation::tanh;
  else if (act == "relu")
    cfg.activation = Activation::relu;
  else
    throw ConfigError("unknown activation: " + act);
  return cfg;
}

}  // namespace mtrc
