#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "patchx/common.hpp"

namespace patchx {

enum class Split { train, val, test };

std::string_view to_string(Split split);

struct TimeSeriesSample {
  std::int64_t id = 0;
  Matrix values;  // [channels x length]
  int label = 0;

  int channels() const { return static_cast<int>(values.rows()); }
  int length() const { return static_cast<int>(values.cols()); }
};

struct Dataset {
  std::vector<TimeSeriesSample> samples;
  int class_count = 2;
  Split split = Split::train;

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
  int channels() const { return samples.empty() ? 0 : samples.front().channels(); }
  int length() const { return samples.empty() ? 0 : samples.front().length(); }

  /// Throws ValidationError on shape mismatch, out-of-range label,
  /// duplicate id or non-finite value.
  void validate() const;

  std::vector<int> class_counts() const;
};

struct DelimiterSpec {
  char delimiter = ',';
};

/// Reads the delimited-text layout: a header line `channels,length,class_count`
/// followed by one sample per row (channel-major values, trailing label).
/// Blank lines and lines starting with '#' are skipped. Row order becomes ids.
Dataset load_dataset(const std::filesystem::path& path, DelimiterSpec schema = {},
                     Split split = Split::train);
Dataset parse_dataset(std::string_view text, DelimiterSpec schema = {}, Split split = Split::train);

void write_dataset(const std::filesystem::path& path, const Dataset& dataset,
                   DelimiterSpec schema = {});
std::string format_dataset(const Dataset& dataset, DelimiterSpec schema = {});

// --- synthetic point-anomaly data -------------------------------------------

struct AnomalyGenSpec {
  int train_count = 3500;
  int val_count = 1500;
  int test_count = 1000;
  int length = 50;
  int channels = 3;
  double noise_sigma = 1.0;
  double peak_min = 7.0;
  double peak_max = 12.0;
  double peak_probability = 0.5;
  double sigma_multiplier = 4.0;  // k in the mean + k*std rule
  std::uint64_t seed = 0;

  void validate() const;
};

/// Location of an injected peak.
struct PeakMark {
  int channel = 0;
  int position = 0;
};

struct AnomalySplits {
  Dataset train;
  Dataset val;
  Dataset test;
  // Parallel to each split's samples; empty optional when no peak was injected.
  std::vector<std::optional<PeakMark>> train_peaks;
  std::vector<std::optional<PeakMark>> val_peaks;
  std::vector<std::optional<PeakMark>> test_peaks;
};

/// Label rule of the anomaly family: true iff some point of some channel
/// exceeds that channel's mean + k * (population) std.
bool exceeds_channel_threshold(const Matrix& values, double k);

AnomalySplits generate_anomaly(const AnomalyGenSpec& spec);

// --- normalization ------------------------------------------------------------

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  static constexpr double kMinStd = 1e-8;
};

/// Per-channel mean and std over every time-step of every sample.
NormStats fit_normalization(const Dataset& train);
Dataset znormalize(const Dataset& dataset, const NormStats& stats);
/// Normalizes with the dataset's own statistics (use for the train split).
Dataset znormalize(const Dataset& dataset);
Matrix normalize_values(const Matrix& values, const NormStats& stats);

// --- splitting ------------------------------------------------------------------

struct HoldoutSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Stratified three-way split. Split sizes are round(N * fraction) overall;
/// per-class shares use largest-remainder allocation.
HoldoutSplits split_holdout(const Dataset& dataset, double train_fraction, double val_fraction,
                            std::uint64_t seed);

}  // namespace patchx
