#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace eigavg {

std::string code_version();

/// Checksum of the validated config with output_dir removed, 16 hex digits.
std::string config_hash(const nlohmann::json& cfg);
/// fnv1a of the file bytes, 16 hex digits.
std::string file_checksum(const std::filesystem::path& p);

struct RunManifest {
  std::string experiment;
  int schema_version = 0;
  std::string config_hash;
  std::string code_version;
  std::map<std::string, std::string> checksums;
  double wall_time = 0.0;
  std::vector<std::string> warnings;
  std::vector<std::string> failures;
  nlohmann::json summary;
  nlohmann::json config;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

/// Parses a config file; syntax errors become ConfigError.
nlohmann::json load_config(const std::filesystem::path& path);

/// Validates, runs the pipeline in a staging directory and moves it to the output
/// directory only once complete. Nothing is left behind when the run throws.
RunManifest run_experiment(const nlohmann::json& raw,
                           const std::optional<std::filesystem::path>& output_dir = {});

/// Reads a manifest file, or the manifest.json inside a run directory.
RunManifest read_manifest(const std::filesystem::path& path);

struct CompareReport {
  bool equivalent = true;
  std::vector<std::string> lines;
};

/// Field-wise and checksum diff; CSVs whose checksums differ are compared cell by cell
/// with the experiment's column tolerances. Throws SchemaMismatch across experiments.
CompareReport compare_manifests(const std::filesystem::path& a, const std::filesystem::path& b);

/// Entry point of the command line tool; returns the exit status.
int cli_main(int argc, char** argv);

}  // namespace eigavg
