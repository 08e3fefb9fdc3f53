#pragma once

#include <string>

#include "json.hpp"

#include "gor/cost.hpp"
#include "gor/regularizer.hpp"
#include "gor/trainer.hpp"

namespace gor {

nlohmann::json to_json(const RegConfig& cfg);
nlohmann::json to_json(const DatasetSpec& spec);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const PenaltyReport& rep);
nlohmann::json to_json(const EpochStats& st);

/// Deterministic except for the "timing" object.
nlohmann::json to_json(const RunReport& rep);

nlohmann::json to_json(const std::vector<BenchResult>& rows);
nlohmann::json to_json(const OrthoReport& rep);

/// Overlay a config-file section onto defaults. Unknown keys are rejected.
void apply_json(TrainConfig& cfg, const nlohmann::json& j);
void apply_json(RegConfig& cfg, const nlohmann::json& j);

void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

/// The named top-level section of a config file ({} when absent); any section
/// name outside the known command set is rejected.
nlohmann::json config_section(const nlohmann::json& file, const std::string& section);

}  // namespace gor
