#pragma once

#include "belieflab/envs.hpp"

#include <json.hpp>

namespace belieflab::envs {

/// Every field of the structural config; missing keys keep family defaults.
nlohmann::json to_json(const FamilyConfig& config);
FamilyConfig family_config_from_json(const nlohmann::json& j);

}  // namespace belieflab::envs
