#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patchx/data.hpp"

namespace patchx {

/// One (stride, length) patch layout plus the transformation flags.
///
/// `zero` sets everything outside the patch to 0 and cannot be disabled.
/// `attach` appends a binary mask channel marking the valid range.
/// `notemp` shifts the patch content to time-step 0, dropping its position.
struct PatchConfig {
  int stride = 5;
  int length = 10;
  bool zero = true;
  bool attach = true;
  bool notemp = false;

  /// Throws ConfigError. `sample_length` <= 0 skips the length bound.
  void validate(int sample_length = 0) const;

  /// `stride:length`
  std::string token() const;

  friend bool operator==(const PatchConfig&, const PatchConfig&) = default;
};

/// Parses a `stride:length` token; flags are taken from `flags`.
PatchConfig parse_patch_token(std::string_view token, const PatchConfig& flags = {});
/// Parses a comma/semicolon separated list of `stride:length` tokens.
std::vector<PatchConfig> parse_patch_list(std::string_view list, const PatchConfig& flags = {});
std::string format_patch_list(std::span<const PatchConfig> configs);

/// Throws ConfigError if any config is invalid or the attach flags disagree.
void validate_configs(std::span<const PatchConfig> configs, int sample_length);

struct PatchSpan {
  int index = 0;  // p
  int start = 0;  // p * stride
  int end = 0;    // min(start + length, sample_length)

  int size() const { return end - start; }
  bool contains(int t) const { return t >= start && t < end; }
  friend bool operator==(const PatchSpan&, const PatchSpan&) = default;
};

/// Every p >= 0 with p * stride < sample_length, in increasing p.
std::vector<PatchSpan> enumerate_patches(int sample_length, const PatchConfig& config);

struct PatchInstance {
  std::int64_t sample_id = 0;
  int config_index = 0;
  int patch_index = 0;
  Matrix values;     // [channels (+1 with attach) x sample length]
  PatchSpan span;    // source range in the original sample
  int valid_start = 0;  // range in `values` holding the patch content
  int valid_end = 0;
  int label = 0;
};

/// Length-preserving patch view of `sample`. Throws IndexError for an invalid p.
PatchInstance transform(const TimeSeriesSample& sample, int p, const PatchConfig& config,
                        int config_index = 0);

/// Output order: samples, then configs, then p.
std::vector<PatchInstance> build_patch_dataset(const Dataset& dataset,
                                               std::span<const PatchConfig> configs);
std::vector<PatchInstance> build_sample_patches(const TimeSeriesSample& sample,
                                                std::span<const PatchConfig> configs);

/// Channel count seen by the network for these configs.
int patch_channels(int sample_channels, std::span<const PatchConfig> configs);

}  // namespace patchx
