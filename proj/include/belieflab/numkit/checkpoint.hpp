#pragma once

#include "belieflab/numkit/parameters.hpp"

#include <filesystem>
#include <string>

namespace belieflab::numkit {

inline constexpr int kCheckpointVersion = 1;

/// JSON text: {"format","version","parameters":[{"name","shape","values"}]}.
/// Values are written with round-trip precision.
std::string serialize_parameters(const ParameterSet& params);
ParameterSet deserialize_parameters(const std::string& text);

void save_parameters(const ParameterSet& params, const std::filesystem::path& path);
ParameterSet load_parameters(const std::filesystem::path& path);

/// Copies values by name into `target`; every target name must be present with
/// the same shape.
void assign_parameters(ParameterSet& target, const ParameterSet& source);

}  // namespace belieflab::numkit
