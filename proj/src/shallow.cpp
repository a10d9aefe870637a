#include "patchx/shallow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace patchx {

std::string_view to_string(ShallowKind k) {
  switch (k) {
    case ShallowKind::svm:
      return "svm";
    case ShallowKind::forest:
      return "forest";
    case ShallowKind::trivial:
      return "trivial";
  }
  return "?";
}

std::string_view to_string(TrivialMode m) {
  return m == TrivialMode::occurrence ? "occurrence" : "confidence-sum";
}

std::string_view to_string(FeatureSubsample f) { return f == FeatureSubsample::sqrt ? "sqrt" : "all"; }

ShallowKind parse_shallow_kind(std::string_view s) {
  if (s == "svm") return ShallowKind::svm;
  if (s == "forest" || s == "rf") return ShallowKind::forest;
  if (s == "trivial") return ShallowKind::trivial;
  throw ConfigError("unknown shallow classifier '" + std::string(s) + "'");
}

TrivialMode parse_trivial_mode(std::string_view s) {
  if (s == "occurrence") return TrivialMode::occurrence;
  if (s == "confidence-sum" || s == "confidence_sum") return TrivialMode::confidence_sum;
  throw ConfigError("unknown trivial mode '" + std::string(s) + "'");
}

FeatureSubsample parse_feature_subsample(std::string_view s) {
  if (s == "sqrt") return FeatureSubsample::sqrt;
  if (s == "all") return FeatureSubsample::all;
  throw ConfigError("unknown feature subsampling '" + std::string(s) + "'");
}

void ShallowSpec::validate() const {
  if (!(svm.c_reg > 0.0) || svm.epochs <= 0 || !(svm.learning_rate > 0.0)) {
    throw ConfigError("svm regularization, epochs and learning rate must be positive");
  }
  if (forest.trees <= 0 || forest.max_depth < 0 || forest.min_leaf <= 0) {
    throw ConfigError("forest trees and min_leaf must be positive, max_depth >= 0");
  }
}

// --- LinearSvm --------------------------------------------------------------------

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

LinearSvm::Machine train_binary(const FeatureMatrix& x, const std::vector<int>& sign,
                                const SvmParams& params, std::uint64_t seed) {
  const std::size_t n = x.size();
  const std::size_t d = x.front().size();
  const double lambda = 1.0 / (params.c_reg * static_cast<double>(n));
  std::vector<double> w(d, 0.0);
  double b = 0.0;
  std::vector<double> w_avg(d, 0.0);
  double b_avg = 0.0;
  long averaged = 0;
  const int average_from = params.epochs / 2;

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  long t = 0;
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (auto i : order) {
      ++t;
      const double eta = params.learning_rate / (1.0 + params.learning_rate * lambda * t);
      const double y = sign[i];
      const double margin = y * (dot(w, x[i]) + b);
      for (auto& wj : w) wj *= (1.0 - eta * lambda);
      if (margin < 1.0) {
        for (std::size_t j = 0; j < d; ++j) w[j] += eta * y * x[i][j];
        b += eta * y;
      }
      if (epoch >= average_from) {
        for (std::size_t j = 0; j < d; ++j) w_avg[j] += w[j];
        b_avg += b;
        ++averaged;
      }
    }
  }
  for (auto& v : w_avg) v /= static_cast<double>(averaged);
  return {w_avg, b_avg / static_cast<double>(averaged)};
}

}  // namespace

void LinearSvm::fit(const FeatureMatrix& x, std::span<const int> y, int classes,
                    const SvmParams& params) {
  class_count = classes;
  const std::size_t d = x.front().size();
  FeatureMatrix data = x;
  feature_mean.clear();
  feature_scale.clear();
  if (params.standardize) {
    feature_mean.assign(d, 0.0);
    feature_scale.assign(d, 0.0);
    for (const auto& row : x) {
      for (std::size_t j = 0; j < d; ++j) feature_mean[j] += row[j];
    }
    for (auto& m : feature_mean) m /= static_cast<double>(x.size());
    for (const auto& row : x) {
      for (std::size_t j = 0; j < d; ++j) {
        feature_scale[j] += (row[j] - feature_mean[j]) * (row[j] - feature_mean[j]);
      }
    }
    for (auto& s : feature_scale) s = std::max(std::sqrt(s / static_cast<double>(x.size())), 1e-8);
    for (auto& row : data) {
      for (std::size_t j = 0; j < d; ++j) row[j] = (row[j] - feature_mean[j]) / feature_scale[j];
    }
  }

  machines.clear();
  binary = classes == 2 && !params.force_one_vs_rest;
  std::vector<int> sign(x.size());
  if (binary) {
    for (std::size_t i = 0; i < x.size(); ++i) sign[i] = y[i] == 1 ? 1 : -1;
    machines.push_back(train_binary(data, sign, params, mix_seed(params.seed, 0)));
    return;
  }
  for (int c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < x.size(); ++i) sign[i] = y[i] == c ? 1 : -1;
    machines.push_back(
        train_binary(data, sign, params, mix_seed(params.seed, static_cast<std::uint64_t>(c))));
  }
}

std::vector<double> LinearSvm::scores(std::span<const double> x) const {
  std::vector<double> z(x.begin(), x.end());
  if (!feature_mean.empty()) {
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = (z[j] - feature_mean[j]) / feature_scale[j];
  }
  if (binary) {
    const double f = dot(machines[0].weights, z) + machines[0].bias;
    return {-f, f};
  }
  std::vector<double> out;
  out.reserve(machines.size());
  for (const auto& m : machines) out.push_back(dot(m.weights, z) + m.bias);
  return out;
}

// --- RandomForest ---------------------------------------------------------------------

namespace {

struct TreeBuilder {
  const FeatureMatrix& x;
  std::span<const int> y;
  int class_count;
  const ForestParams& params;
  std::mt19937_64 rng;
  RandomForest::Tree tree;

  int majority(const std::vector<std::size_t>& rows) const {
    std::vector<int> counts(static_cast<std::size_t>(class_count), 0);
    for (auto r : rows) ++counts[static_cast<std::size_t>(y[r])];
    return argmax_lowest(counts);
  }

  int build(std::vector<std::size_t> rows, int depth) {
    const int index = static_cast<int>(tree.size());
    tree.push_back({});
    tree[static_cast<std::size_t>(index)].prediction = majority(rows);

    std::vector<double> parent(static_cast<std::size_t>(class_count), 0.0);
    for (auto r : rows) parent[static_cast<std::size_t>(y[r])] += 1.0;
    const double n = static_cast<double>(rows.size());
    double parent_sq = 0.0;
    for (double c : parent) parent_sq += c * c;
    const double parent_impurity = n - parent_sq / n;  // n * gini

    const bool depth_limited = params.max_depth > 0 && depth >= params.max_depth;
    if (parent_impurity <= 1e-12 || depth_limited ||
        rows.size() < 2 * static_cast<std::size_t>(params.min_leaf)) {
      return index;
    }

    const auto d = x.front().size();
    std::vector<std::size_t> features(d);
    std::iota(features.begin(), features.end(), std::size_t{0});
    std::size_t mtry = d;
    if (params.features == FeatureSubsample::sqrt) {
      mtry = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(d))));
    }
    for (std::size_t i = 0; i < mtry; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, d - 1);
      std::swap(features[i], features[pick(rng)]);
    }

    double best_impurity = parent_impurity;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::size_t> sorted = rows;
    std::vector<double> left(static_cast<std::size_t>(class_count));
    for (std::size_t fi = 0; fi < mtry; ++fi) {
      const auto f = features[fi];
      std::stable_sort(sorted.begin(), sorted.end(),
                       [&](std::size_t a, std::size_t b) { return x[a][f] < x[b][f]; });
      std::fill(left.begin(), left.end(), 0.0);
      double left_sq = 0.0;
      double right_sq = parent_sq;
      std::vector<double> right = parent;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        const auto c = static_cast<std::size_t>(y[sorted[i]]);
        left_sq += 2.0 * left[c] + 1.0;
        left[c] += 1.0;
        right_sq -= 2.0 * right[c] - 1.0;
        right[c] -= 1.0;
        const double lo = x[sorted[i]][f];
        const double hi = x[sorted[i + 1]][f];
        if (!(lo < hi)) continue;
        const double nl = static_cast<double>(i + 1);
        const double nr = n - nl;
        if (nl < params.min_leaf || nr < params.min_leaf) continue;
        const double impurity = (nl - left_sq / nl) + (nr - right_sq / nr);
        if (impurity < best_impurity - 1e-12) {
          best_impurity = impurity;
          best_feature = static_cast<int>(f);
          double mid = lo + (hi - lo) / 2.0;
          if (!(mid < hi)) mid = lo;
          best_threshold = mid;
        }
      }
    }
    if (best_feature < 0) return index;

    std::vector<std::size_t> left_rows, right_rows;
    for (auto r : rows) {
      (x[r][static_cast<std::size_t>(best_feature)] <= best_threshold ? left_rows : right_rows)
          .push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const int l = build(std::move(left_rows), depth + 1);
    const int r = build(std::move(right_rows), depth + 1);
    auto& node = tree[static_cast<std::size_t>(index)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return index;
  }
};

}  // namespace

void RandomForest::fit(const FeatureMatrix& x, std::span<const int> y, int classes,
                       const ForestParams& params) {
  class_count = classes;
  trees.clear();
  const std::size_t n = x.size();
  for (int t = 0; t < params.trees; ++t) {
    TreeBuilder builder{x, y, classes, params, std::mt19937_64(mix_seed(params.seed, t)), {}};
    std::uniform_int_distribution<std::size_t> draw(0, n - 1);
    std::vector<std::size_t> rows(n);
    for (auto& r : rows) r = draw(builder.rng);
    std::sort(rows.begin(), rows.end());
    builder.build(std::move(rows), 0);
    trees.push_back(std::move(builder.tree));
  }
}

int RandomForest::predict_tree(std::size_t t, std::span<const double> x) const {
  const auto& tree = trees[t];
  std::size_t node = 0;
  while (tree[node].feature >= 0) {
    const auto& n = tree[node];
    node = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left
                                                                                           : n.right);
  }
  return tree[node].prediction;
}

std::vector<double> RandomForest::scores(std::span<const double> x) const {
  std::vector<double> votes(static_cast<std::size_t>(class_count), 0.0);
  for (std::size_t t = 0; t < trees.size(); ++t) votes[static_cast<std::size_t>(predict_tree(t, x))] += 1.0;
  for (auto& v : votes) v /= static_cast<double>(trees.size());
  return votes;
}

// --- TrivialVoter -----------------------------------------------------------------------

std::vector<double> TrivialVoter::scores(const ClassPresenceVector& v) const {
  const auto confidence = v.total_confidence();
  if (mode == TrivialMode::confidence_sum) return confidence;
  const auto wins = v.total_wins();
  const double total = std::accumulate(confidence.begin(), confidence.end(), 0.0);
  std::vector<double> out(wins.size());
  // The fractional part stays below 1, so counts dominate and confidence
  // only breaks ties.
  for (std::size_t c = 0; c < wins.size(); ++c) out[c] = wins[c] + confidence[c] / (1.0 + total);
  return out;
}

// --- ShallowModel ---------------------------------------------------------------------------

std::vector<double> ShallowModel::scores(const ClassPresenceVector& v) const {
  if (v.dimension() != feature_dimension) {
    throw DimensionError("presence vector has dimension " + std::to_string(v.dimension()) +
                         ", model was fit on " + std::to_string(feature_dimension));
  }
  if (const auto* trivial = std::get_if<TrivialVoter>(&impl)) return trivial->scores(v);
  const auto features = v.features();
  if (const auto* svm = std::get_if<LinearSvm>(&impl)) return svm->scores(features);
  return std::get<RandomForest>(impl).scores(features);
}

int ShallowModel::predict(const ClassPresenceVector& v) const { return argmax_lowest(scores(v)); }

ShallowModel fit_shallow(const ShallowSpec& spec, std::span<const ClassPresenceVector> train) {
  spec.validate();
  if (train.empty()) throw ValidationError("shallow classifier needs training vectors");
  ShallowModel model;
  model.spec = spec;
  model.class_count = train.front().class_count;
  model.feature_dimension = train.front().dimension();
  for (const auto& v : train) {
    if (v.dimension() != model.feature_dimension || v.class_count != model.class_count) {
      throw DimensionError("training vectors disagree on dimension");
    }
  }
  if (spec.kind == ShallowKind::trivial) {
    model.impl = TrivialVoter{spec.trivial.mode};
    return model;
  }
  std::set<int> present;
  for (const auto& v : train) present.insert(v.label);
  if (present.size() < 2) {
    throw ValidationError("shallow classifier needs at least two classes in the training set");
  }
  FeatureMatrix x;
  std::vector<int> y;
  x.reserve(train.size());
  for (const auto& v : train) {
    x.push_back(v.features());
    y.push_back(v.label);
  }
  if (spec.kind == ShallowKind::svm) {
    LinearSvm svm;
    svm.fit(x, y, model.class_count, spec.svm);
    model.impl = std::move(svm);
  } else {
    RandomForest forest;
    forest.fit(x, y, model.class_count, spec.forest);
    model.impl = std::move(forest);
  }
  return model;
}

Evaluation evaluate_predictions(std::span<const int> truth, std::span<const int> predicted,
                                int class_count) {
  Evaluation e;
  const auto classes = static_cast<std::size_t>(class_count);
  e.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  e.total = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++e.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
    if (truth[i] == predicted[i]) ++e.correct;
  }
  e.accuracy = e.total == 0 ? 0.0 : static_cast<double>(e.correct) / static_cast<double>(e.total);
  return e;
}

Evaluation evaluate(const ShallowModel& model, std::span<const ClassPresenceVector> vectors) {
  std::vector<int> truth, predicted;
  for (const auto& v : vectors) {
    truth.push_back(v.label);
    predicted.push_back(model.predict(v));
  }
  return evaluate_predictions(truth, predicted, model.class_count);
}

}  // namespace patchx
