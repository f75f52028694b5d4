#pragma once

#include <json.hpp>

#include "mtrc/model.hpp"

namespace mtrc {

nlohmann::json arch_config_to_json(const ArchConfig& cfg);
ArchConfig arch_config_from_json(const nlohmann::json& j);

}  // namespace mtrc
