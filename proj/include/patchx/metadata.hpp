#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "patchx/network.hpp"

namespace patchx {

/// Softmax output of the patch network for one patch.
struct PatchPrediction {
  int config_index = 0;
  std::vector<double> softmax;
};

struct MetadataOptions {
  /// Sum all config blocks into a single block (ablation).
  bool collapse_blocks = false;
  /// Divide each block by its config's patch count.
  bool normalize_by_count = false;

  friend bool operator==(const MetadataOptions&, const MetadataOptions&) = default;
};

/// Class-presence vector: per config block and class, the sum of the winning
/// softmax confidences of the patches whose argmax is that class. `wins`
/// counts those patches.
struct ClassPresenceVector {
  std::int64_t sample_id = 0;
  int class_count = 0;
  std::vector<std::vector<double>> blocks;
  std::vector<std::vector<int>> wins;
  int label = 0;

  /// Concatenated blocks; the shallow classifier's input.
  std::vector<double> features() const;
  std::size_t dimension() const { return blocks.size() * static_cast<std::size_t>(class_count); }
  /// Per-class win totals over every block.
  std::vector<int> total_wins() const;
  /// Per-class confidence totals over every block.
  std::vector<double> total_confidence() const;
};

/// Throws ValidationError for an empty prediction list, DimensionError for a
/// softmax of the wrong length, IndexError for a config index outside
/// [0, config_count).
ClassPresenceVector extract(std::int64_t sample_id, std::span<const PatchPrediction> predictions,
                            int config_count, int class_count, int label = 0,
                            const MetadataOptions& options = {});

/// Runs the network over one sample's patches as a single batch.
std::vector<PatchPrediction> predict_patches(const Network& net,
                                             std::span<const PatchInstance> patches);

/// One vector per dataset sample, in dataset order. `patches` must hold the
/// patch instances of those samples (any order). Throws ValidationError for a
/// sample without patches.
std::vector<ClassPresenceVector> extract_all(const Network& net, const Dataset& dataset,
                                             std::span<const PatchInstance> patches,
                                             int config_count,
                                             const MetadataOptions& options = {});

/// `sample_id,label,f0,f1,...` rows with a header line.
void write_presence_vectors(std::ostream& out, std::span<const ClassPresenceVector> vectors);

}  // namespace patchx
