#include "patchx/pipeline.hpp"

#include <chrono>

namespace patchx {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

NormStats identity_stats(int channels) {
  NormStats s;
  s.mean.assign(static_cast<std::size_t>(channels), 0.0);
  s.stddev.assign(static_cast<std::size_t>(channels), 1.0);
  return s;
}

}  // namespace

int Bundle::sample_channels() const { return static_cast<int>(norm.mean.size()); }

std::vector<PatchInstance> Bundle::patches(const TimeSeriesSample& raw) const {
  if (raw.channels() != sample_channels() || raw.length() != sample_length()) {
    throw DimensionError("sample is " + std::to_string(raw.channels()) + "x" +
                         std::to_string(raw.length()) + ", bundle expects " +
                         std::to_string(sample_channels()) + "x" + std::to_string(sample_length()));
  }
  const TimeSeriesSample normalized{raw.id, normalize_values(raw.values, norm), raw.label};
  return build_sample_patches(normalized, configs);
}

SampleInference infer(const Bundle& bundle, const TimeSeriesSample& raw) {
  SampleInference out;
  out.patches = bundle.patches(raw);
  out.predictions = predict_patches(bundle.network, out.patches);
  out.presence = extract(raw.id, out.predictions, static_cast<int>(bundle.configs.size()),
                         bundle.class_count(), raw.label, bundle.metadata);
  out.scores = bundle.shallow.scores(out.presence);
  out.predicted = argmax_lowest(out.scores);
  return out;
}

int predict_sample(const Bundle& bundle, const TimeSeriesSample& raw) {
  return infer(bundle, raw).predicted;
}

std::vector<ClassPresenceVector> presence_vectors(const Bundle& bundle, const Dataset& raw) {
  std::vector<ClassPresenceVector> out;
  out.reserve(raw.size());
  for (const auto& sample : raw.samples) {
    const auto patches = bundle.patches(sample);
    const auto predictions = predict_patches(bundle.network, patches);
    out.push_back(extract(sample.id, predictions, static_cast<int>(bundle.configs.size()),
                          bundle.class_count(), sample.label, bundle.metadata));
  }
  return out;
}

PatchStageResult train_patch_stage(const PipelineSpec& spec, const Dataset& train,
                                   const Dataset& val) {
  if (train.empty() || val.empty()) throw ValidationError("train and val splits must be non-empty");
  train.validate();
  val.validate();
  validate_configs(spec.configs, train.length());
  spec.train.validate();
  const auto start = Clock::now();

  PatchStageResult result;
  Bundle& bundle = result.bundle;
  bundle.configs = spec.configs;
  bundle.normalize = spec.normalize;
  bundle.metadata = spec.metadata;
  bundle.norm = spec.normalize ? fit_normalization(train) : identity_stats(train.channels());

  const Dataset train_n = znormalize(train, bundle.norm);
  const Dataset val_n = znormalize(val, bundle.norm);
  const auto train_patches = build_patch_dataset(train_n, spec.configs);
  const auto val_patches = build_patch_dataset(val_n, spec.configs);

  NetworkSpec net_spec;
  net_spec.input_channels = patch_channels(train.channels(), spec.configs);
  net_spec.input_length = train.length();
  net_spec.class_count = train.class_count;
  net_spec.blocks = spec.blocks;
  net_spec.seed = spec.network_seed;
  bundle.network = Network(net_spec);
  result.log = patchx::train(bundle.network, as_examples(train_patches), as_examples(val_patches), spec.train);
  result.seconds = seconds_since(start);
  return result;
}

PipelineResult fit_pipeline(const PipelineSpec& spec, const Dataset& train, const Dataset& val) {
  auto stage = train_patch_stage(spec, train, val);
  PipelineResult result;
  result.bundle = std::move(stage.bundle);
  result.log = std::move(stage.log);
  result.network_seconds = stage.seconds;

  auto start = Clock::now();
  result.train_vectors = presence_vectors(result.bundle, train);
  result.metadata_seconds = seconds_since(start);

  start = Clock::now();
  result.bundle.shallow = fit_shallow(spec.shallow, result.train_vectors);
  result.shallow_seconds = seconds_since(start);
  return result;
}

int BlackboxModel::predict(const TimeSeriesSample& raw) const {
  return argmax_lowest(network.forward(normalize_values(raw.values, norm)));
}

BlackboxModel train_blackbox(const PipelineSpec& spec, const Dataset& train, const Dataset& val,
                             TrainLog* log) {
  if (train.empty() || val.empty()) throw ValidationError("train and val splits must be non-empty");
  BlackboxModel model;
  model.normalize = spec.normalize;
  model.norm = spec.normalize ? fit_normalization(train) : identity_stats(train.channels());
  const Dataset train_n = znormalize(train, model.norm);
  const Dataset val_n = znormalize(val, model.norm);

  NetworkSpec net_spec;
  net_spec.input_channels = train.channels();
  net_spec.input_length = train.length();
  net_spec.class_count = train.class_count;
  net_spec.blocks = spec.blocks;
  net_spec.seed = spec.network_seed;
  model.network = Network(net_spec);
  auto result = patchx::train(model.network, as_examples(train_n), as_examples(val_n), spec.train);
  if (log != nullptr) *log = std::move(result);
  return model;
}

}  // namespace patchx
