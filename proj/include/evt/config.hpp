#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"

#include "evt/backbone.hpp"
#include "evt/representation.hpp"
#include "evt/training.hpp"

namespace evt {

// Everything a run needs, as one JSON document:
//   { "repr": {...}, "model": {...}, "train": {...} }
// Missing keys keep their defaults; unknown keys are rejected.
struct RunConfig {
    ReprConfig repr;
    ModelConfig model;
    TrainConfig train;
};

nlohmann::json to_json(const ReprConfig& c);
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const RunConfig& c);

// Strict parsers: throw std::invalid_argument naming the offending key.
ReprConfig repr_from_json(const nlohmann::json& j);
ModelConfig model_from_json(const nlohmann::json& j);
TrainConfig train_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

// Applies "section.key=value" (value parsed as JSON, falling back to a string).
void apply_override(RunConfig& cfg, std::string_view assignment);

}  // namespace evt
