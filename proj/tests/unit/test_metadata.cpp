#include <algorithm>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "patchx/metadata.hpp"
#include "support.hpp"

namespace patchx {
namespace {

std::vector<PatchPrediction> single_config(std::vector<std::vector<double>> softmaxes) {
  std::vector<PatchPrediction> out;
  for (auto& s : softmaxes) out.push_back({0, std::move(s)});
  return out;
}

TEST(Extract, SinglePatch) {
  const auto v = extract(0, single_config({{0.7, 0.3}}), 1, 2);
  ASSERT_EQ(v.blocks.size(), 1u);
  EXPECT_DOUBLE_EQ(v.blocks[0][0], 0.7);
  EXPECT_DOUBLE_EQ(v.blocks[0][1], 0.0);
}

TEST(Extract, ThreePatches) {
  const auto v = extract(0, single_config({{0.9, 0.1}, {0.6, 0.4}, {0.2, 0.8}}), 1, 2);
  EXPECT_NEAR(v.blocks[0][0], 1.5, 1e-15);
  EXPECT_NEAR(v.blocks[0][1], 0.8, 1e-15);
  EXPECT_EQ(v.wins[0][0], 2);
  EXPECT_EQ(v.wins[0][1], 1);
}

TEST(Extract, TieGoesToLowestClass) {
  const auto v = extract(0, single_config({{0.5, 0.5}}), 1, 2);
  EXPECT_DOUBLE_EQ(v.blocks[0][0], 0.5);
  EXPECT_DOUBLE_EQ(v.blocks[0][1], 0.0);
  const auto w = extract(0, single_config({{0.2, 0.4, 0.4}}), 1, 3);
  EXPECT_DOUBLE_EQ(w.blocks[0][1], 0.4);
  EXPECT_DOUBLE_EQ(w.blocks[0][2], 0.0);
}

TEST(Extract, Errors) {
  EXPECT_THROW(extract(0, std::vector<PatchPrediction>{}, 1, 2), ValidationError);
  EXPECT_THROW(extract(0, single_config({{0.2, 0.3, 0.5}}), 1, 2), DimensionError);
  const std::vector<PatchPrediction> bad = {{2, {0.5, 0.5}}};
  EXPECT_THROW(extract(0, bad, 2, 2), IndexError);
}

TEST(Extract, BlockLocalityAndDimension) {
  const std::vector<PatchPrediction> preds = {{0, {0.8, 0.2}}, {1, {0.3, 0.7}}, {1, {0.4, 0.6}}};
  const auto v = extract(3, preds, 2, 2, 1);
  EXPECT_EQ(v.dimension(), 4u);
  const auto f = v.features();
  ASSERT_EQ(f.size(), 4u);
  EXPECT_DOUBLE_EQ(f[0], 0.8);
  EXPECT_DOUBLE_EQ(f[1], 0.0);
  EXPECT_DOUBLE_EQ(f[2], 0.0);
  EXPECT_NEAR(f[3], 1.3, 1e-15);
  EXPECT_EQ(v.label, 1);
  EXPECT_EQ(v.sample_id, 3);

  MetadataOptions collapse;
  collapse.collapse_blocks = true;
  const auto c = extract(3, preds, 2, 2, 1, collapse);
  ASSERT_EQ(c.dimension(), 2u);
  EXPECT_NEAR(c.blocks[0][1], 1.3, 1e-15);

  MetadataOptions per_count;
  per_count.normalize_by_count = true;
  const auto n = extract(3, preds, 2, 2, 1, per_count);
  EXPECT_NEAR(n.blocks[1][1], 0.65, 1e-15);
}

std::vector<double> random_softmax(std::mt19937_64& rng, int classes, bool tie) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(classes));
  for (auto& x : v) x = u(rng);
  if (tie && classes > 1) {
    const auto top = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    const auto other = (top + 1 + rng() % static_cast<std::size_t>(classes - 1)) % static_cast<std::size_t>(classes);
    v[other] = v[top];
  }
  double s = 0.0;
  for (double x : v) s += x;
  for (auto& x : v) x /= s;
  return v;
}

TEST(Extract, MatchesIndependentResummation) {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 1000; ++trial) {
    const int classes = 2 + static_cast<int>(rng() % 4);
    const int configs = 1 + static_cast<int>(rng() % 3);
    const int patches = 1 + static_cast<int>(rng() % 30);
    std::vector<PatchPrediction> preds;
    for (int i = 0; i < patches; ++i) {
      preds.push_back({static_cast<int>(rng() % static_cast<unsigned>(configs)),
                       random_softmax(rng, classes, rng() % 4 == 0)});
    }
    std::vector<std::vector<double>> oracle(static_cast<std::size_t>(configs),
                                            std::vector<double>(static_cast<std::size_t>(classes), 0.0));
    double mass = 0.0;
    for (const auto& p : preds) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < p.softmax.size(); ++c) {
        if (p.softmax[c] > p.softmax[best]) best = c;
      }
      oracle[static_cast<std::size_t>(p.config_index)][best] += p.softmax[best];
      mass += p.softmax[best];
    }
    const auto v = extract(trial, preds, configs, classes);
    double total = 0.0;
    for (int k = 0; k < configs; ++k) {
      for (int c = 0; c < classes; ++c) {
        const double got = v.blocks[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
        EXPECT_NEAR(got, oracle[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)], 1e-9);
        EXPECT_GE(got, 0.0);
        total += got;
      }
    }
    EXPECT_NEAR(total, mass, 1e-9);

    auto shuffled = preds;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto w = extract(trial, shuffled, configs, classes);
    for (std::size_t k = 0; k < v.blocks.size(); ++k) {
      for (std::size_t c = 0; c < v.blocks[k].size(); ++c) EXPECT_NEAR(w.blocks[k][c], v.blocks[k][c], 1e-12);
    }
  }
}

TEST(ExtractAll, OneVectorPerSampleWithPatchCountBound) {
  const auto& f = testing::trained_fixture();
  const auto& bundle = f.result.bundle;
  Dataset small = f.data.test;
  small.samples.resize(20);
  const auto normalized = znormalize(small, bundle.norm);
  const auto patches = build_patch_dataset(normalized, bundle.configs);
  const auto vectors = extract_all(bundle.network, normalized, patches, static_cast<int>(bundle.configs.size()));
  ASSERT_EQ(vectors.size(), 20u);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    EXPECT_EQ(vectors[i].sample_id, small.samples[i].id);
    EXPECT_EQ(vectors[i].dimension(), 4u);
    for (std::size_t k = 0; k < bundle.configs.size(); ++k) {
      const double bound = static_cast<double>(enumerate_patches(50, bundle.configs[k]).size());
      for (double x : vectors[i].blocks[k]) EXPECT_LE(x, bound);
    }
  }

  auto reversed = patches;
  std::reverse(reversed.begin(), reversed.end());
  const auto again = extract_all(bundle.network, normalized, reversed, 2);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(again[i].features()[j], vectors[i].features()[j], 1e-9);
    }
  }

  std::vector<PatchInstance> missing(patches.begin() + 15, patches.end());
  EXPECT_THROW(extract_all(bundle.network, normalized, missing, 2), ValidationError);
}

TEST(PresenceExport, HeaderAndRows) {
  const std::vector<PatchPrediction> preds = {{0, {0.25, 0.75}}};
  const std::vector<ClassPresenceVector> v = {extract(7, preds, 1, 2, 1)};
  std::ostringstream out;
  write_presence_vectors(out, v);
  EXPECT_EQ(out.str(), "sample_id,label,k0_c0,k0_c1\n7,1,0,0.75\n");
}

}  // namespace
}  // namespace patchx
