#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchx/config.hpp"
#include "patchx/explain.hpp"
#include "patchx/gradcheck.hpp"

namespace patchx {

/// Failure inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& cause)
      : Error(stage + ": " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Creates `<parent>/<UTC timestamp>-<command>[-n]` and returns it.
std::filesystem::path make_run_dir(const std::filesystem::path& parent, const std::string& command);

/// Writes manifest.json listing every file in `dir` with its size and FNV-1a
/// digest, plus the command, seed and `extra`.
void write_manifest(const std::filesystem::path& dir, const std::string& command,
                    const RunConfig& config, const nlohmann::json& extra = {});

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& value);

/// Sample-level predictions and scores of `bundle` on `data`.
struct SplitPredictions {
  std::vector<int> truth;
  std::vector<int> predicted;
  std::vector<ClassPresenceVector> vectors;
  double seconds = 0.0;
};
SplitPredictions predict_split(const Bundle& bundle, const Dataset& data);

nlohmann::json evaluation_json(const Evaluation& e);
nlohmann::json train_log_json(const TrainLog& log);
void write_train_log(std::ostream& out, const TrainLog& log);

// --- run ---------------------------------------------------------------------------

struct RunOutcome {
  std::filesystem::path dir;
  Evaluation val;
  Evaluation test;
  double train_seconds = 0.0;
  double test_seconds = 0.0;
};

/// Steps 1-4 plus persistence: resolved.ini, bundle.pchx, metrics.json,
/// timing.json, train_log.csv, presence_*.csv, predictions.csv, manifest.json.
RunOutcome cmd_run(const RunConfig& config, std::ostream& log);

/// Writes the three generated or loaded splits (and peak positions) as files.
std::filesystem::path cmd_generate(const RunConfig& config, std::ostream& log);

// --- bench --------------------------------------------------------------------------

struct BenchOptions {
  /// Patch-config sets of the stride/length grid.
  std::vector<std::vector<PatchConfig>> grid;
  bool blackbox = true;
  /// Also train the four valid zero=true flag rows on the configured patches.
  bool flag_ablation = false;
};

/// Default grid: {5:10}, {10:20}, {5:10, 10:20}.
std::vector<std::vector<PatchConfig>> default_bench_grid(const PatchConfig& flags = {});

struct BenchCell {
  std::string name;
  std::string configs;
  std::string flags;
  std::string variant;  // svm | forest | trivial | blackbox
  std::optional<double> accuracy;
  double train_seconds = 0.0;
  double test_seconds = 0.0;
  std::string error;
  std::string run_dir;  // relative to the bench directory
};

struct BenchReport {
  std::filesystem::path dir;
  std::vector<BenchCell> cells;
};

/// Runs every grid cell with the shared seed; a failing cell is recorded and
/// the remaining cells continue.
BenchReport cmd_bench(const RunConfig& config, const BenchOptions& options, std::ostream& log);

// --- explanation commands --------------------------------------------------------

struct ExplainOptions {
  std::filesystem::path bundle;
  Split split = Split::test;
  std::vector<std::int64_t> sample_ids;  // empty = first `limit` samples
  int limit = 10;
  CategoryThresholds thresholds;
};
std::filesystem::path cmd_explain(const RunConfig& config, const ExplainOptions& options,
                                  std::ostream& log);

struct ProbeOptions {
  std::filesystem::path bundle;
  Split split = Split::test;
  std::int64_t sample_id = -1;  // -1 = first sample with a known peak
  int channel = -1;             // -1 = injected peak or largest |value|
  int position = -1;
  std::vector<double> factors = linear_factors(0.0, 2.0, 21);
  int target_class = 1;
};
std::filesystem::path cmd_probe(const RunConfig& config, const ProbeOptions& options,
                                std::ostream& log);

struct HistogramOptions {
  std::filesystem::path bundle;
  Split split = Split::test;
  double bin_width = 0.05;
};
std::filesystem::path cmd_histogram(const RunConfig& config, const HistogramOptions& options,
                                    std::ostream& log);

struct GradcheckOptions {
  int seeds = 10;
  int channels = 2;
  int length = 8;
  int batch = 3;
  int classes = 3;
  std::vector<ConvBlockSpec> blocks = {{4, 3, Activation::relu}, {4, 3, Activation::relu}};
  GradientCheckOptions check;
};

struct GradcheckSummary {
  bool passed = true;
  std::vector<std::string> lines;
  double max_relative_error = 0.0;
};

/// Finite-difference checks of every layer type and of a composite network,
/// once per seed.
GradcheckSummary cmd_gradcheck(const GradcheckOptions& options, std::ostream& log);

/// Parses `first:last:steps` or a comma list of factors.
std::vector<double> parse_factors(std::string_view text);

}  // namespace patchx
