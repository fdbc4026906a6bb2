#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace divshape {

enum class Preset {
  Decomposition,
  Localization,
  Periods,
  IdentityWitness,
  NseVerify,
  Optimize,
  OptimizeInterior,
  CheckFamily,
};

std::string preset_name(Preset p);
/// Throws ConfigError for an unknown name.
Preset parse_preset(const std::string& name);

/// One experiment. Preset-specific settings stay in `params` and are checked
/// by parse_config against the keys the preset understands.
struct ExperimentConfig {
  Preset preset = Preset::Decomposition;
  std::uint64_t seed = 1;
  std::optional<double> h;                  ///< base mesh size; the preset default when unset
  std::map<std::string, double> tolerances; ///< overrides of check thresholds by check name
  nlohmann::json params = nlohmann::json::object();
  std::string source = "<config>";

  double mesh_size() const;
  /// Threshold of a named check, or the fallback.
  double tolerance(const std::string& check, double fallback) const;
};

/// Parses the JSON text. Syntax errors name the line and column; bad values
/// name the field. Throws ConfigError.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::string& path);
/// Defaults for a preset.
ExperimentConfig default_config(Preset p);

struct Check {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  std::string relation;  ///< "<=", "<", ">=", "==" or "true"
  bool passed = false;
};

struct Criterion {
  int id = 0;            ///< acceptance criterion number; 0 for the interior problem
  std::string name;
  std::vector<Check> checks;
  bool passed() const;
};

struct ReportBundle {
  std::string preset;
  std::uint64_t seed = 0;
  double h = 0.0;
  std::vector<Criterion> criteria;
  nlohmann::json measured = nlohmann::json::object();
  std::map<std::string, std::string> tables;     ///< file name -> CSV text
  std::map<std::string, std::string> artifacts;  ///< file name -> contents (JSON, PGM)
  nlohmann::json timestamps = nlohmann::json::object();

  bool passed() const;
  /// Deterministic summary: everything except the timestamps.
  nlohmann::json summary() const;
  /// summary() plus the timestamps field.
  nlohmann::json summary_with_timestamps() const;
  /// Writes summary.json, the tables and the artifacts; returns the written paths.
  std::vector<std::string> write(const std::string& dir) const;
  /// Reads a summary.json (or a directory holding one). Table and artifact
  /// names are kept with empty contents.
  static ReportBundle load(const std::string& path);
};

/// Runs the preset pipeline with its invariant checks. Module errors are
/// rethrown with the preset name prefixed.
ReportBundle run_preset(const ExperimentConfig& cfg);

struct DiffEntry {
  std::string field;
  double a = 0.0;
  double b = 0.0;
  double relative = 0.0;  ///< |a - b| / max(|a|, |b|)
  bool exceeds = false;
};

/// Field-wise numeric differences of the measured values and check values.
/// Lists every field that differs; `exceeds` marks differences above `threshold`.
/// Throws PreconditionError when the presets differ.
std::vector<DiffEntry> compare_reports(const ReportBundle& a, const ReportBundle& b, double threshold = 0.2);
nlohmann::json diff_to_json(const std::vector<DiffEntry>& diff, double threshold);

}  // namespace divshape
