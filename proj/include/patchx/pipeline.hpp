#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "patchx/data.hpp"
#include "patchx/metadata.hpp"
#include "patchx/network.hpp"
#include "patchx/patching.hpp"
#include "patchx/shallow.hpp"

namespace patchx {

/// Everything needed to go from a raw sample to a sample-level label:
/// normalization statistics, patch layouts, the patch network and the
/// shallow classifier.
struct Bundle {
  std::vector<PatchConfig> configs;
  bool normalize = true;
  NormStats norm;
  MetadataOptions metadata;
  Network network;
  ShallowModel shallow;

  int class_count() const { return network.class_count(); }
  int sample_channels() const;
  int sample_length() const { return network.spec().input_length; }

  /// Normalized patch instances of a raw sample.
  std::vector<PatchInstance> patches(const TimeSeriesSample& raw) const;
};

/// Full per-sample inference trace.
struct SampleInference {
  std::vector<PatchInstance> patches;
  std::vector<PatchPrediction> predictions;  // parallel to patches
  ClassPresenceVector presence;
  std::vector<double> scores;
  int predicted = 0;
};

/// Runs steps 1-4 on one raw sample. Patch predictions always come from one
/// batch holding exactly this sample's patches, so repeated inference is
/// bitwise reproducible.
SampleInference infer(const Bundle& bundle, const TimeSeriesSample& raw);
int predict_sample(const Bundle& bundle, const TimeSeriesSample& raw);
/// Presence vectors of raw samples (steps 1-3).
std::vector<ClassPresenceVector> presence_vectors(const Bundle& bundle, const Dataset& raw);

struct PipelineSpec {
  std::vector<PatchConfig> configs = {{5, 10}, {10, 20}};
  std::vector<ConvBlockSpec> blocks = NetworkSpec::default_blocks();
  std::uint64_t network_seed = 0;
  TrainSpec train;
  ShallowSpec shallow;
  MetadataOptions metadata;
  bool normalize = true;
};

struct PatchStageResult {
  Bundle bundle;  // shallow model not yet fitted
  TrainLog log;
  double seconds = 0.0;
};

/// Steps 1-2: normalization, patching and patch-network training.
PatchStageResult train_patch_stage(const PipelineSpec& spec, const Dataset& train,
                                   const Dataset& val);

struct PipelineResult {
  Bundle bundle;
  TrainLog log;
  std::vector<ClassPresenceVector> train_vectors;
  double network_seconds = 0.0;
  double metadata_seconds = 0.0;
  double shallow_seconds = 0.0;

  double train_seconds() const { return network_seconds + metadata_seconds + shallow_seconds; }
};

/// Steps 1-4 on the training split.
PipelineResult fit_pipeline(const PipelineSpec& spec, const Dataset& train, const Dataset& val);

/// Whole-sample network without patching, for comparison.
struct BlackboxModel {
  bool normalize = true;
  NormStats norm;
  Network network;

  int predict(const TimeSeriesSample& raw) const;
};

BlackboxModel train_blackbox(const PipelineSpec& spec, const Dataset& train, const Dataset& val,
                             TrainLog* log = nullptr);

// --- bundle file -----------------------------------------------------------------

/// Magic string opening every bundle file.
inline constexpr char kBundleMagic[] = "PCHX1";

std::vector<std::uint8_t> encode_bundle(const Bundle& bundle);
Bundle decode_bundle(std::span<const std::uint8_t> bytes);
void save_bundle(const std::filesystem::path& path, const Bundle& bundle);
Bundle load_bundle(const std::filesystem::path& path);

}  // namespace patchx
