#include "patchx/patching.hpp"

#include <algorithm>
#include <charconv>

namespace patchx {

void PatchConfig::validate(int sample_length) const {
  if (stride <= 0 || length <= 0) {
    throw ConfigError("patch stride and length must be positive (got " + token() + ")");
  }
  if (!zero) {
    throw ConfigError("zero=false is not a valid transformation: data outside the patch "
                      "must be zeroed");
  }
  if (notemp && !zero) throw ConfigError("notemp requires zero");
  if (sample_length > 0 && length > sample_length) {
    throw ConfigError("patch length " + std::to_string(length) + " exceeds sample length " +
                      std::to_string(sample_length));
  }
}

std::string PatchConfig::token() const {
  return std::to_string(stride) + ":" + std::to_string(length);
}

namespace {

int parse_positive(std::string_view field, std::string_view token) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || value <= 0) {
    throw ConfigError("invalid patch token '" + std::string(token) +
                      "', expected stride:length with positive integers");
  }
  return value;
}

}  // namespace

PatchConfig parse_patch_token(std::string_view token, const PatchConfig& flags) {
  const auto colon = token.find(':');
  if (colon == std::string_view::npos) {
    throw ConfigError("invalid patch token '" + std::string(token) + "', expected stride:length");
  }
  PatchConfig config = flags;
  config.stride = parse_positive(token.substr(0, colon), token);
  config.length = parse_positive(token.substr(colon + 1), token);
  config.validate();
  return config;
}

std::vector<PatchConfig> parse_patch_list(std::string_view list, const PatchConfig& flags) {
  std::vector<PatchConfig> configs;
  std::size_t start = 0;
  while (start <= list.size()) {
    auto end = list.find_first_of(",; ", start);
    if (end == std::string_view::npos) end = list.size();
    auto token = list.substr(start, end - start);
    if (!token.empty()) configs.push_back(parse_patch_token(token, flags));
    start = end + 1;
  }
  if (configs.empty()) throw ConfigError("empty patch config list");
  return configs;
}

std::string format_patch_list(std::span<const PatchConfig> configs) {
  std::string out;
  for (const auto& c : configs) {
    if (!out.empty()) out += ',';
    out += c.token();
  }
  return out;
}

void validate_configs(std::span<const PatchConfig> configs, int sample_length) {
  if (configs.empty()) throw ConfigError("at least one patch config is required");
  for (const auto& c : configs) c.validate(sample_length);
  const bool attach = configs.front().attach;
  for (const auto& c : configs) {
    if (c.attach != attach) {
      throw ConfigError("all patch configs must agree on the attach flag");
    }
  }
}

std::vector<PatchSpan> enumerate_patches(int sample_length, const PatchConfig& config) {
  std::vector<PatchSpan> spans;
  if (sample_length <= 0 || config.stride <= 0) return spans;
  spans.reserve(static_cast<std::size_t>((sample_length + config.stride - 1) / config.stride));
  for (int p = 0; p * config.stride < sample_length; ++p) {
    const int start = p * config.stride;
    spans.push_back({p, start, std::min(start + config.length, sample_length)});
  }
  return spans;
}

PatchInstance transform(const TimeSeriesSample& sample, int p, const PatchConfig& config,
                        int config_index) {
  const int length = sample.length();
  const int channels = sample.channels();
  if (p < 0 || static_cast<long long>(p) * config.stride >= length) {
    throw IndexError("patch index " + std::to_string(p) + " is invalid for length " +
                     std::to_string(length) + " with stride " + std::to_string(config.stride));
  }
  PatchInstance out;
  out.sample_id = sample.id;
  out.config_index = config_index;
  out.patch_index = p;
  out.label = sample.label;
  out.span.index = p;
  out.span.start = p * config.stride;
  out.span.end = std::min(out.span.start + config.length, length);
  const int width = out.span.size();
  out.valid_start = config.notemp ? 0 : out.span.start;
  out.valid_end = out.valid_start + width;

  out.values = Matrix::Zero(channels + (config.attach ? 1 : 0), length);
  out.values.block(0, out.valid_start, channels, width) =
      sample.values.block(0, out.span.start, channels, width);
  if (config.attach) out.values.block(channels, out.valid_start, 1, width).setOnes();
  return out;
}

std::vector<PatchInstance> build_sample_patches(const TimeSeriesSample& sample,
                                                std::span<const PatchConfig> configs) {
  std::vector<PatchInstance> out;
  for (std::size_t k = 0; k < configs.size(); ++k) {
    for (const auto& span : enumerate_patches(sample.length(), configs[k])) {
      out.push_back(transform(sample, span.index, configs[k], static_cast<int>(k)));
    }
  }
  return out;
}

std::vector<PatchInstance> build_patch_dataset(const Dataset& dataset,
                                               std::span<const PatchConfig> configs) {
  if (dataset.empty()) return {};
  validate_configs(configs, dataset.length());
  std::size_t per_sample = 0;
  for (const auto& c : configs) per_sample += enumerate_patches(dataset.length(), c).size();
  std::vector<PatchInstance> out;
  out.reserve(per_sample * dataset.size());
  for (const auto& sample : dataset.samples) {
    auto patches = build_sample_patches(sample, configs);
    std::move(patches.begin(), patches.end(), std::back_inserter(out));
  }
  return out;
}

int patch_channels(int sample_channels, std::span<const PatchConfig> configs) {
  return sample_channels + (!configs.empty() && configs.front().attach ? 1 : 0);
}

}  // namespace patchx
