#pragma once

#include <json.hpp>

#include "vocap/features.hpp"
#include "vocap/models.hpp"

namespace vocap {

// nlohmann ADL hooks for the config structs that cross file boundaries
// (experiment configs, checkpoint headers, stage manifests).

void to_json(nlohmann::json& j, const FeatureSpec& s);
void from_json(const nlohmann::json& j, FeatureSpec& s);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

void to_json(nlohmann::json& j, const GmmConfig& c);
void from_json(const nlohmann::json& j, GmmConfig& c);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// FNV-1a 64-bit over a string; used for config/corpus provenance hashes.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hash_hex(std::uint64_t h);

}  // namespace vocap
