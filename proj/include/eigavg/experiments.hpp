#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace eigavg {

inline constexpr int kSchemaVersion = 1;

struct ExperimentInfo {
  std::string name;
  std::string description;
  /// Every key the pipeline reads, with its default. Configs may only override these.
  nlohmann::json defaults;
  /// Relative tolerance per CSV column for manifest comparison; "*" is the fallback.
  std::map<std::string, double> tolerances;
};

const std::vector<ExperimentInfo>& experiment_catalog();
/// Throws ConfigError for an unknown name.
const ExperimentInfo& experiment_info(const std::string& name);

/// Defaults overlaid with `raw`. Throws ConfigError on a missing or wrong schema
/// version, an unknown experiment, an unknown key or a type mismatch.
nlohmann::json validate_config(const nlohmann::json& raw);

struct ExperimentResult {
  nlohmann::json summary = nlohmann::json::object();
  std::vector<std::string> files;     // relative to the output directory, in write order
  std::vector<std::string> warnings;
  /// Predicted inequalities that did not hold; the run still writes its artifacts.
  std::vector<std::string> failures;
};

/// Runs the pipeline of a validated config, writing artifacts into `dir` (which must exist).
ExperimentResult run_pipeline(const nlohmann::json& cfg, const std::filesystem::path& dir);

}  // namespace eigavg
