#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "patchx/metadata.hpp"

namespace patchx {

enum class ShallowKind { svm, forest, trivial };
enum class TrivialMode { occurrence, confidence_sum };
enum class FeatureSubsample { sqrt, all };

std::string_view to_string(ShallowKind k);
std::string_view to_string(TrivialMode m);
std::string_view to_string(FeatureSubsample f);
ShallowKind parse_shallow_kind(std::string_view s);
TrivialMode parse_trivial_mode(std::string_view s);
FeatureSubsample parse_feature_subsample(std::string_view s);

struct SvmParams {
  double c_reg = 1.0;
  int epochs = 200;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
  bool standardize = false;
  /// Train one machine per class even when there are only two classes.
  bool force_one_vs_rest = false;
};

struct ForestParams {
  int trees = 100;
  int max_depth = 0;  // 0 = unlimited
  int min_leaf = 1;
  FeatureSubsample features = FeatureSubsample::sqrt;
  std::uint64_t seed = 0;
};

struct TrivialParams {
  TrivialMode mode = TrivialMode::occurrence;
};

struct ShallowSpec {
  ShallowKind kind = ShallowKind::svm;
  SvmParams svm;
  ForestParams forest;
  TrivialParams trivial;

  void validate() const;
};

using FeatureMatrix = std::vector<std::vector<double>>;

/// Linear SVM: L2-regularized hinge loss minimized by stochastic sub-gradient
/// descent, one-vs-rest for more than two classes.
class LinearSvm {
 public:
  void fit(const FeatureMatrix& x, std::span<const int> y, int class_count, const SvmParams& params);
  /// One score per class; for the binary machine the scores are (-f, f).
  std::vector<double> scores(std::span<const double> x) const;

  struct Machine {
    std::vector<double> weights;
    double bias = 0.0;
  };

  int class_count = 0;
  bool binary = false;
  std::vector<double> feature_mean;   // empty unless standardized
  std::vector<double> feature_scale;
  std::vector<Machine> machines;
};

/// Gini-impurity CART trees on bootstrap samples with per-node feature
/// subsampling; prediction is a majority vote over trees.
class RandomForest {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int prediction = 0;
  };
  using Tree = std::vector<Node>;

  void fit(const FeatureMatrix& x, std::span<const int> y, int class_count,
           const ForestParams& params);
  /// Fraction of trees voting for each class.
  std::vector<double> scores(std::span<const double> x) const;
  int predict_tree(std::size_t tree, std::span<const double> x) const;

  int class_count = 0;
  std::vector<Tree> trees;
};

/// Pass-through voting on the patch winners recorded in the presence vector.
class TrivialVoter {
 public:
  TrivialMode mode = TrivialMode::occurrence;
  /// occurrence: win counts with the confidence sum as a fractional tie-break;
  /// confidence_sum: per-class confidence totals.
  std::vector<double> scores(const ClassPresenceVector& v) const;
};

class ShallowModel {
 public:
  ShallowSpec spec;
  int class_count = 0;
  std::size_t feature_dimension = 0;
  std::variant<LinearSvm, RandomForest, TrivialVoter> impl;

  /// Per-class scores; larger means more likely. Throws DimensionError on a
  /// feature-dimension mismatch.
  std::vector<double> scores(const ClassPresenceVector& v) const;
  /// Argmax of scores, lowest class index on ties.
  int predict(const ClassPresenceVector& v) const;
};

/// Throws ValidationError when fewer than two classes are present (svm and
/// forest) or when `train` is empty.
ShallowModel fit_shallow(const ShallowSpec& spec, std::span<const ClassPresenceVector> train);

struct Evaluation {
  double accuracy = 0.0;
  std::size_t total = 0;
  std::size_t correct = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

Evaluation evaluate(const ShallowModel& model, std::span<const ClassPresenceVector> vectors);
Evaluation evaluate_predictions(std::span<const int> truth, std::span<const int> predicted,
                                int class_count);

}  // namespace patchx
