#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patchx/data.hpp"
#include "patchx/pipeline.hpp"

namespace patchx {

/// Flat key/value settings. Section keys are `section.key`; the run-level
/// keys `seed` and `output` have no section.
using Settings = std::map<std::string, std::string>;

struct SettingInfo {
  std::string_view key;
  std::string_view default_value;
  std::string_view help;
};

/// Every recognized key with its default ("auto" seeds derive from `seed`).
std::span<const SettingInfo> known_settings();
bool is_known_setting(std::string_view key);
Settings default_settings();

/// INI text with sections [data] [patching] [network] [train] [shallow].
/// Throws ConfigError for syntax errors and unknown keys.
Settings parse_ini_settings(std::string_view text);
Settings read_ini_settings(const std::filesystem::path& path);

/// `section.key=value`; throws ConfigError for unknown keys.
void apply_assignment(Settings& settings, std::string_view assignment);

enum class SeedOrigin { flag, config, environment, fallback };
std::string_view to_string(SeedOrigin o);

/// Parses PATCHX_SEED when set. Throws ConfigError for a malformed value.
std::optional<std::uint64_t> seed_from_environment();

struct DataConfig {
  std::string source = "anomaly";  // anomaly | file
  AnomalyGenSpec anomaly;
  std::filesystem::path train_path;
  std::filesystem::path val_path;
  std::filesystem::path test_path;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  std::uint64_t split_seed = 0;
  char delimiter = ',';
};

struct RunConfig {
  std::uint64_t seed = 0;
  SeedOrigin seed_origin = SeedOrigin::fallback;
  std::filesystem::path output = "runs";
  DataConfig data;
  PipelineSpec pipeline;

  void validate() const;
  /// Every key materialized, seeds included.
  Settings to_settings() const;
  /// Resolved INI document.
  std::string to_ini() const;
};

/// Builds a validated RunConfig. `seed` comes from `settings` when present,
/// otherwise from `env_seed`, otherwise 0. Component seeds set to "auto" are
/// derived from the run seed.
RunConfig resolve_config(const Settings& settings, std::optional<std::uint64_t> env_seed,
                         SeedOrigin explicit_origin = SeedOrigin::config);

struct LoadedData {
  Dataset train;
  Dataset val;
  Dataset test;
  // Filled for generated data only; parallel to the split samples.
  std::vector<std::optional<PeakMark>> train_peaks;
  std::vector<std::optional<PeakMark>> val_peaks;
  std::vector<std::optional<PeakMark>> test_peaks;

  const Dataset& split(Split s) const;
  const std::vector<std::optional<PeakMark>>& peaks(Split s) const;
};

/// Generates or reads the three splits described by `config`. A file source
/// with only a train path is split with split_holdout.
LoadedData load_data(const DataConfig& config);

bool parse_bool(std::string_view text);

}  // namespace patchx
