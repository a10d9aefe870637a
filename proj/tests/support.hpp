#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "patchx/data.hpp"
#include "patchx/pipeline.hpp"

namespace patchx::testing {

inline TimeSeriesSample make_sample(std::int64_t id, std::vector<std::vector<double>> rows,
                                    int label = 0) {
  TimeSeriesSample s;
  s.id = id;
  s.label = label;
  s.values = Matrix(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.empty() ? 0 : rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t t = 0; t < rows[r].size(); ++t) {
      s.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)) = rows[r][t];
    }
  }
  return s;
}

inline TimeSeriesSample random_sample(std::mt19937_64& rng, std::int64_t id, int channels,
                                      int length, int label = 0) {
  std::normal_distribution<double> noise(0.0, 1.0);
  TimeSeriesSample s;
  s.id = id;
  s.label = label;
  s.values = Matrix(channels, length);
  for (int c = 0; c < channels; ++c) {
    for (int t = 0; t < length; ++t) s.values(c, t) = noise(rng);
  }
  return s;
}

inline Dataset random_dataset(std::uint64_t seed, int n, int channels, int length,
                              int class_count = 2) {
  std::mt19937_64 rng(seed);
  Dataset d;
  d.class_count = class_count;
  for (int i = 0; i < n; ++i) d.samples.push_back(random_sample(rng, i, channels, length, i % class_count));
  return d;
}

/// Small anomaly task shared by the pipeline-level tests.
inline AnomalyGenSpec small_anomaly(std::uint64_t seed = 11) {
  AnomalyGenSpec spec;
  spec.train_count = 600;
  spec.val_count = 100;
  spec.test_count = 60;
  spec.seed = seed;
  return spec;
}

inline PipelineSpec small_pipeline(std::uint64_t seed = 5) {
  PipelineSpec spec;
  spec.blocks = {{8, 3, Activation::relu}, {8, 3, Activation::relu}};
  spec.network_seed = seed;
  spec.train.epochs = 10;
  spec.train.patience = 3;
  spec.train.seed = seed + 1;
  spec.shallow.svm.seed = seed + 2;
  spec.shallow.forest.seed = seed + 3;
  return spec;
}

/// A fitted small pipeline, trained once per test binary.
struct TrainedFixture {
  AnomalySplits data;
  PipelineResult result;
};

inline const TrainedFixture& trained_fixture() {
  static const TrainedFixture fixture = [] {
    TrainedFixture f;
    f.data = generate_anomaly(small_anomaly());
    f.result = fit_pipeline(small_pipeline(), f.data.train, f.data.val);
    return f;
  }();
  return fixture;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("patchx-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace patchx::testing
