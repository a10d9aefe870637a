#include "patchx/metadata.hpp"

#include <algorithm>
#include <map>
#include <ostream>

namespace patchx {

std::vector<double> ClassPresenceVector::features() const {
  std::vector<double> out;
  out.reserve(dimension());
  for (const auto& b : blocks) out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<int> ClassPresenceVector::total_wins() const {
  std::vector<int> out(static_cast<std::size_t>(class_count), 0);
  for (const auto& w : wins) {
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += w[c];
  }
  return out;
}

std::vector<double> ClassPresenceVector::total_confidence() const {
  std::vector<double> out(static_cast<std::size_t>(class_count), 0.0);
  for (const auto& b : blocks) {
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += b[c];
  }
  return out;
}

ClassPresenceVector extract(std::int64_t sample_id, std::span<const PatchPrediction> predictions,
                            int config_count, int class_count, int label,
                            const MetadataOptions& options) {
  if (predictions.empty()) {
    throw ValidationError("sample " + std::to_string(sample_id) + " has no patch predictions");
  }
  if (config_count <= 0 || class_count <= 0) {
    throw ValidationError("config and class counts must be positive");
  }
  const auto classes = static_cast<std::size_t>(class_count);
  const auto configs = static_cast<std::size_t>(config_count);
  std::vector<std::vector<double>> sums(configs, std::vector<double>(classes, 0.0));
  std::vector<std::vector<int>> wins(configs, std::vector<int>(classes, 0));
  std::vector<int> patches_per_config(configs, 0);

  for (const auto& pred : predictions) {
    if (pred.softmax.size() != classes) {
      throw DimensionError("softmax has " + std::to_string(pred.softmax.size()) +
                           " entries, expected " + std::to_string(class_count));
    }
    if (pred.config_index < 0 || pred.config_index >= config_count) {
      throw IndexError("config index " + std::to_string(pred.config_index) + " outside [0, " +
                       std::to_string(config_count) + ")");
    }
    const auto k = static_cast<std::size_t>(pred.config_index);
    const auto winner = static_cast<std::size_t>(argmax_lowest(pred.softmax));
    sums[k][winner] += pred.softmax[winner];
    ++wins[k][winner];
    ++patches_per_config[k];
  }

  if (options.normalize_by_count) {
    for (std::size_t k = 0; k < configs; ++k) {
      if (patches_per_config[k] == 0) continue;
      for (auto& v : sums[k]) v /= patches_per_config[k];
    }
  }

  ClassPresenceVector out;
  out.sample_id = sample_id;
  out.class_count = class_count;
  out.label = label;
  if (options.collapse_blocks) {
    std::vector<double> total(classes, 0.0);
    std::vector<int> total_wins(classes, 0);
    for (std::size_t k = 0; k < configs; ++k) {
      for (std::size_t c = 0; c < classes; ++c) {
        total[c] += sums[k][c];
        total_wins[c] += wins[k][c];
      }
    }
    out.blocks.push_back(std::move(total));
    out.wins.push_back(std::move(total_wins));
  } else {
    out.blocks = std::move(sums);
    out.wins = std::move(wins);
  }
  return out;
}

std::vector<PatchPrediction> predict_patches(const Network& net,
                                             std::span<const PatchInstance> patches) {
  std::vector<const Matrix*> inputs;
  inputs.reserve(patches.size());
  for (const auto& p : patches) inputs.push_back(&p.values);
  const Matrix probs = net.forward_batch(inputs);
  std::vector<PatchPrediction> out;
  out.reserve(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto row = probs.row(static_cast<Eigen::Index>(i));
    out.push_back({patches[i].config_index, std::vector<double>(row.data(), row.data() + row.size())});
  }
  return out;
}

std::vector<ClassPresenceVector> extract_all(const Network& net, const Dataset& dataset,
                                             std::span<const PatchInstance> patches,
                                             int config_count, const MetadataOptions& options) {
  // Group patch positions per sample, preserving their relative order.
  std::map<std::int64_t, std::vector<std::size_t>> by_sample;
  for (std::size_t i = 0; i < patches.size(); ++i) by_sample[patches[i].sample_id].push_back(i);

  std::vector<ClassPresenceVector> out;
  out.reserve(dataset.size());
  std::vector<PatchInstance> group;
  for (const auto& sample : dataset.samples) {
    auto it = by_sample.find(sample.id);
    if (it == by_sample.end() || it->second.empty()) {
      throw ValidationError("sample " + std::to_string(sample.id) + " has no patches");
    }
    group.clear();
    for (auto i : it->second) group.push_back(patches[i]);
    const auto predictions = predict_patches(net, group);
    out.push_back(extract(sample.id, predictions, config_count, net.class_count(), sample.label,
                          options));
  }
  return out;
}

void write_presence_vectors(std::ostream& out, std::span<const ClassPresenceVector> vectors) {
  out << "sample_id,label";
  if (!vectors.empty()) {
    const auto& first = vectors.front();
    for (std::size_t k = 0; k < first.blocks.size(); ++k) {
      for (int c = 0; c < first.class_count; ++c) out << ",k" << k << "_c" << c;
    }
  }
  out << '\n';
  const auto old_precision = out.precision(17);
  for (const auto& v : vectors) {
    out << v.sample_id << ',' << v.label;
    for (double f : v.features()) out << ',' << f;
    out << '\n';
  }
  out.precision(old_precision);
}

}  // namespace patchx
