#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchx/pipeline.hpp"

namespace patchx {

enum class PatchCategory { class_specific, shared, unrelated };

std::string_view to_string(PatchCategory c);

/// class-specific if confidence >= specific; unrelated if confidence <=
/// 1/C + unrelated_margin; shared otherwise.
struct CategoryThresholds {
  double specific = 0.9;
  double unrelated_margin = 0.1;

  PatchCategory classify(double confidence, int class_count) const;
};

struct ExplanationRecord {
  std::int64_t sample_id = 0;
  int config_index = 0;
  int patch_index = 0;
  PatchSpan span;
  int predicted_class = 0;
  double confidence = 0.0;  // max softmax
  std::vector<double> softmax;
  PatchCategory category = PatchCategory::shared;
};

struct SampleExplanation {
  std::int64_t sample_id = 0;
  int label = 0;
  int predicted = 0;
  int class_count = 0;
  std::vector<double> scores;  // shallow classifier scores
  ClassPresenceVector presence;
  std::vector<ExplanationRecord> records;  // configs, then p
};

/// Per-patch records plus the sample-level prediction of the full pipeline.
/// Throws DimensionError when the sample shape does not match the bundle.
SampleExplanation explain_sample(const Bundle& bundle, const TimeSeriesSample& sample,
                                 const CategoryThresholds& thresholds = {});

/// Records derived from an existing inference trace.
std::vector<ExplanationRecord> make_records(const SampleInference& inference, int class_count,
                                            const CategoryThresholds& thresholds = {});

/// Opacity proxy in [0, 1]: (confidence - 1/C) / (1 - 1/C).
double confidence_alpha(double confidence, int class_count);

// --- confidence histogram -----------------------------------------------------

struct HistogramReport {
  int class_count = 0;
  double bin_width = 0.05;
  std::vector<double> edges;  // bins + 1 entries from 1/C to 1
  std::vector<std::size_t> counts;
  /// [predicted class][bin]; empty when the breakdown was not requested.
  std::vector<std::vector<std::size_t>> per_class;

  std::size_t bins() const { return counts.size(); }
  std::size_t total() const;
  /// Bin holding `confidence`; values outside [1/C, 1] are clamped.
  std::size_t bin_of(double confidence) const;
};

HistogramReport make_histogram(int class_count, double bin_width = 0.05, bool per_class = true);
void add_confidence(HistogramReport& report, double confidence, int predicted_class);

/// Histogram of the max softmax of every patch of every sample.
/// Throws ValidationError for an empty dataset.
HistogramReport confidence_histogram(const Bundle& bundle, const Dataset& dataset,
                                     double bin_width = 0.05, bool per_class = true);

// --- boundary probe -----------------------------------------------------------

struct ProbeStep {
  double factor = 1.0;
  double peak_value = 0.0;  // value at the probed point after scaling
  std::vector<ExplanationRecord> records;
  int predicted = 0;
  int ground_truth = 0;
  /// Mean target-class probability over the patches covering the point.
  double covering_confidence = 0.0;
};

struct BoundaryProbeResult {
  std::int64_t sample_id = 0;
  int channel = 0;
  int position = 0;
  int target_class = 1;
  double sigma_multiplier = 4.0;
  std::vector<ProbeStep> steps;

  /// First factor whose ground-truth label differs from the first step's.
  std::optional<double> ground_truth_flip() const;
  /// First factor whose predicted label differs from the first step's.
  std::optional<double> prediction_flip() const;
  int ground_truth_changes() const;
  /// Whether covering_confidence never decreases along the factors.
  bool covering_confidence_monotone() const;
};

/// Scales the value at (channel, position) by each factor, recomputes the
/// ground truth with the mean + k*std rule and runs the pipeline.
/// Throws IndexError for a point outside the sample and ValidationError for
/// an empty or non-increasing factor list.
BoundaryProbeResult boundary_probe(const Bundle& bundle, const TimeSeriesSample& sample,
                                   int channel, int position, std::span<const double> factors,
                                   double sigma_multiplier = 4.0, int target_class = 1,
                                   const CategoryThresholds& thresholds = {});

/// `steps` factors evenly spaced over [first, last].
std::vector<double> linear_factors(double first, double last, int steps);

// --- mislabel inspection -------------------------------------------------------

struct MislabelEntry {
  std::int64_t sample_id = 0;
  int label = 0;
  int predicted = 0;
  double margin = 0.0;  // top score minus runner-up score
  SampleExplanation explanation;
};

/// Every misclassified sample, ordered by increasing margin (ties by id).
std::vector<MislabelEntry> mislabel_report(const Bundle& bundle, const Dataset& dataset,
                                           const CategoryThresholds& thresholds = {});

// --- export ------------------------------------------------------------------------

inline constexpr int kExplainFormatVersion = 1;

/// One record per line. Columns: sample_id, config_index, patch_index, start,
/// end, predicted_class, confidence, category, p0..p{C-1}.
void write_records(std::ostream& out, std::span<const ExplanationRecord> records, int class_count);
/// Overlay plot data. Columns: sample_id, config_index, patch_index, start,
/// end, class, alpha.
void write_overlay(std::ostream& out, std::span<const ExplanationRecord> records, int class_count);
void write_histogram(std::ostream& out, const HistogramReport& report);

nlohmann::json to_json(const ExplanationRecord& record);
nlohmann::json to_json(const SampleExplanation& explanation);
nlohmann::json to_json(const HistogramReport& report);
nlohmann::json to_json(const BoundaryProbeResult& probe);
nlohmann::json mislabel_json(std::span<const MislabelEntry> entries);

/// Wraps a payload as {"format": kind, "version": ..., kind-specific body}.
nlohmann::json report_document(std::string_view kind, nlohmann::json body);

}  // namespace patchx
