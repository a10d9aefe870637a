#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "patchx/gradcheck.hpp"
#include "patchx/network.hpp"
#include "support.hpp"

namespace patchx {
namespace {

NetworkSpec tiny_spec(std::uint64_t seed = 1, int channels = 2, int length = 10, int classes = 2) {
  NetworkSpec spec;
  spec.input_channels = channels;
  spec.input_length = length;
  spec.class_count = classes;
  spec.blocks = {{4, 3, Activation::relu}, {5, 3, Activation::relu}};
  spec.seed = seed;
  return spec;
}

std::vector<Matrix> random_inputs(std::uint64_t seed, int n, int channels, int length) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Matrix> out;
  for (int i = 0; i < n; ++i) {
    Matrix m(channels, length);
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = noise(rng);
    out.push_back(m);
  }
  return out;
}

std::vector<const Matrix*> views(const std::vector<Matrix>& m) {
  std::vector<const Matrix*> out;
  for (const auto& x : m) out.push_back(&x);
  return out;
}

nn::Dense& head(Network& net) { return std::get<nn::Dense>(net.layers().back()); }

TEST(CrossEntropy, AnalyticValues) {
  EXPECT_LE(patch_cross_entropy(std::vector<double>{1.0, 0.0}, 0), 1e-11);
  EXPECT_NEAR(patch_cross_entropy(std::vector<double>{0.5, 0.5}, 1), 0.6931471805599453, 1e-15);
  EXPECT_NEAR(patch_cross_entropy(std::vector<double>{0.9, 0.1}, 1), 2.302585092994046, 1e-14);
  EXPECT_NEAR(patch_cross_entropy(std::vector<double>{1.0, 0.0}, 1), -std::log(kLogClamp), 1e-9);
  EXPECT_THROW(patch_cross_entropy(std::vector<double>{0.5, 0.5}, 2), IndexError);
}

TEST(NetworkSpec, Validation) {
  auto spec = tiny_spec();
  spec.blocks[0].kernel_size = 11;
  EXPECT_THROW(spec.validate(), Error);
  spec = tiny_spec();
  spec.class_count = 1;
  EXPECT_THROW(spec.validate(), Error);
  EXPECT_EQ(format_blocks(parse_blocks("32x3,64x5:identity")), "32x3,64x5:identity");
  EXPECT_THROW(parse_blocks("32xq"), Error);
}

TEST(Forward, SoftmaxSumsToOne) {
  Network net(tiny_spec(3, 2, 10, 4));
  for (const auto& x : random_inputs(5, 50, 2, 10)) {
    const auto p = net.forward(x * 20.0);
    ASSERT_EQ(p.size(), 4u);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-6);
    for (double v : p) EXPECT_GE(v, 0.0);
  }
}

TEST(Forward, ZeroHeadGivesUniformOutput) {
  Network net(tiny_spec(4, 2, 10, 3));
  head(net).weight.fill(0.0);
  head(net).bias.fill(0.0);
  const auto x = random_inputs(1, 1, 2, 10).front();
  for (double v : net.forward(x)) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Forward, IdenticalInputsIdenticalOutputs) {
  Network net(tiny_spec(5));
  const auto x = random_inputs(2, 1, 2, 10).front();
  const Matrix y = x;
  EXPECT_EQ(net.forward(x), net.forward(y));
  const std::vector<const Matrix*> batch = {&x, &y};
  const Matrix rows = net.forward_batch(batch);
  EXPECT_TRUE(rows.row(0) == rows.row(1));
}

TEST(Forward, ShapeMismatchRejected) {
  Network net(tiny_spec(5));
  EXPECT_THROW(net.forward(Matrix::Zero(3, 10)), DimensionError);
  EXPECT_THROW(net.forward(Matrix::Zero(2, 9)), DimensionError);
}

TEST(Forward, SameSeedSameWeights) {
  Network a(tiny_spec(9));
  Network b(tiny_spec(9));
  Network c(tiny_spec(10));
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_TRUE(*a.parameters()[i] == *b.parameters()[i]);
  }
  EXPECT_FALSE(*a.parameters()[0] == *c.parameters()[0]);
  EXPECT_EQ(a.parameter_count(), 2u * 4 * 3 + 4 + 4u * 5 * 3 + 5 + 5u * 2 + 2);
}

TEST(DatasetLoss, HandExamples) {
  Network net(tiny_spec(6));
  head(net).weight.fill(0.0);
  head(net).bias.fill(0.0);
  const auto xs = random_inputs(3, 2, 2, 10);
  Examples ex{views(xs), {0, 1}};
  EXPECT_NEAR(dataset_loss(net, ex), std::log(2.0), 1e-15);

  head(net).bias[0] = 60.0;
  Examples perfect{views(xs), {0, 0}};
  EXPECT_LE(dataset_loss(net, perfect), 1e-11);
  EXPECT_THROW(dataset_loss(net, Examples{}), ValidationError);
}

TEST(DatasetLoss, MatchesPerPatchResummation) {
  Network net(tiny_spec(7, 2, 10, 3));
  const auto xs = random_inputs(8, 37, 2, 10);
  std::vector<int> labels;
  for (int i = 0; i < 37; ++i) labels.push_back(i % 3);
  Examples ex{views(xs), labels};
  double sum = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) sum += patch_cross_entropy(net.forward(xs[i]), labels[i]);
  const double loss = dataset_loss(net, ex);
  EXPECT_NEAR(loss, sum / 37.0, 1e-12);
  EXPECT_GE(loss, 0.0);

  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0u);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(4));
  Examples permuted;
  for (auto i : order) {
    permuted.inputs.push_back(&xs[i]);
    permuted.labels.push_back(labels[i]);
  }
  EXPECT_LE(std::abs(dataset_loss(net, permuted) - loss), 1e-9 * loss);
}

double gradient_norm(const std::vector<Tensor>& grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (double v : g.values()) s += v * v;
  }
  return std::sqrt(s);
}

TEST(Backward, NoLearningSignalGivesZeroGradient) {
  Network net(tiny_spec(11));
  head(net).weight.fill(0.0);
  head(net).bias.fill(0.0);
  head(net).bias[1] = 60.0;
  const auto xs = random_inputs(12, 6, 2, 10);
  auto grads = net.zero_gradients();
  const std::vector<int> labels(6, 1);
  net.loss_and_gradients(views(xs), labels, grads);
  EXPECT_LT(gradient_norm(grads), 1e-6);
}

TEST(Backward, DuplicatedBatchGivesSameGradient) {
  Network net(tiny_spec(13));
  auto xs = random_inputs(14, 5, 2, 10);
  const std::vector<int> labels = {0, 1, 1, 0, 1};
  auto g1 = net.zero_gradients();
  const double l1 = net.loss_and_gradients(views(xs), labels, g1);
  auto doubled = xs;
  doubled.insert(doubled.end(), xs.begin(), xs.end());
  auto labels2 = labels;
  labels2.insert(labels2.end(), labels.begin(), labels.end());
  auto g2 = net.zero_gradients();
  const double l2 = net.loss_and_gradients(views(doubled), labels2, g2);
  EXPECT_NEAR(l1, l2, 1e-12);
  for (std::size_t i = 0; i < g1.size(); ++i) {
    for (std::size_t j = 0; j < g1[i].size(); ++j) EXPECT_NEAR(g1[i][j], g2[i][j], 1e-12);
  }
}

TEST(Backward, LossMatchesDatasetLoss) {
  Network net(tiny_spec(15, 2, 10, 3));
  const auto xs = random_inputs(16, 7, 2, 10);
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0};
  auto grads = net.zero_gradients();
  const double loss = net.loss_and_gradients(views(xs), labels, grads);
  EXPECT_NEAR(loss, dataset_loss(net, Examples{views(xs), labels}), 1e-12);
}

TEST(GradientCheck, ConvLayerAlone) {
  nn::Layer conv = nn::Conv1d(3, 4, 3);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto* p : nn::layer_parameters(conv)) {
    for (auto& v : p->values()) v = u(rng);
  }
  Matrix input(3, 2 * 9);
  for (Eigen::Index j = 0; j < input.size(); ++j) input.data()[j] = u(rng);
  const auto report = gradient_check_layer(conv, input, 2, 7);
  EXPECT_TRUE(report.passed) << report.summary();
  EXPECT_LT(report.max_relative_error, 1e-3);
  EXPECT_GT(report.checked, 40u);
}

TEST(GradientCheck, DenseSoftmaxCrossEntropyComposite) {
  NetworkSpec spec = tiny_spec(17, 3, 6, 3);
  spec.blocks = {{2, 1, Activation::identity}};
  Network net(spec);
  const auto xs = random_inputs(18, 4, 3, 6);
  const auto report = gradient_check(net, Examples{views(xs), {0, 1, 2, 1}});
  EXPECT_TRUE(report.passed) << report.summary();
  EXPECT_LT(report.max_relative_error, 1e-3);
}

TEST(GradientCheck, FullNetworkSeveralSeeds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Network net(tiny_spec(seed, 2, 8, 3));
    ASSERT_LE(net.parameter_count(), 500u);
    std::mt19937_64 rng(seed + 50);
    std::uniform_real_distribution<double> uni(-0.5, 0.5);
    for (auto* p : net.parameters()) {
      for (auto& v : p->values()) v += uni(rng);
    }
    const auto xs = random_inputs(seed + 100, 3, 2, 8);
    const auto report = gradient_check(net, Examples{views(xs), {0, 1, 2}});
    EXPECT_TRUE(report.passed) << "seed " << seed << ": " << report.summary();
  }
}

TEST(GradientCheck, SignFlippedGradientFails) {
  Network net(tiny_spec(19));
  const auto xs = random_inputs(20, 3, 2, 10);
  const std::vector<int> labels = {0, 1, 0};
  const auto inputs = views(xs);
  GradientProblem problem;
  problem.parameters = net.parameters();
  for (std::size_t i = 0; i < problem.parameters.size(); ++i) problem.names.push_back("p" + std::to_string(i));
  problem.analytic = net.zero_gradients();
  net.loss_and_gradients(inputs, labels, problem.analytic);
  for (auto& g : problem.analytic) {
    for (auto& v : g.values()) v = -v;
  }
  auto grads = net.zero_gradients();
  problem.loss = [&] { return net.loss_and_gradients(inputs, labels, grads); };
  const auto report = check_gradients(problem);
  EXPECT_FALSE(report.passed);
  ASSERT_FALSE(report.worst.empty());
  EXPECT_GT(report.worst.front().relative_error, 1.0);
  EXPECT_NE(report.summary().find("FAIL"), std::string::npos);
}

TEST(Train, SeparableToyReachesFullAccuracy) {
  std::vector<Matrix> train_x;
  std::vector<int> train_y;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> noise(0.0, 0.1);
  for (int i = 0; i < 40; ++i) {
    const int label = i % 2;
    Matrix m = Matrix::Constant(1, 8, label == 0 ? 1.0 : -1.0);
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] += noise(rng);
    train_x.push_back(m);
    train_y.push_back(label);
  }
  const std::vector<Matrix> val_x = {Matrix::Constant(1, 8, 1.0), Matrix::Constant(1, 8, -1.0)};
  NetworkSpec spec = tiny_spec(22, 1, 8, 2);
  Network net(spec);
  TrainSpec ts;
  ts.epochs = 20;
  ts.batch_size = 8;
  ts.learning_rate = 0.01;
  ts.patience = 19;
  ts.seed = 23;
  const auto log = train(net, Examples{views(train_x), train_y}, Examples{views(val_x), {0, 1}}, ts);
  EXPECT_DOUBLE_EQ(log.best_val_accuracy, 1.0);
  EXPECT_LE(log.best_epoch, 20);
  EXPECT_DOUBLE_EQ(accuracy(net, Examples{views(val_x), {0, 1}}), 1.0);
}

TEST(Train, DeterministicUnderSeed) {
  const auto xs = random_inputs(30, 40, 2, 10);
  std::vector<int> labels;
  for (const auto& x : xs) labels.push_back(x.sum() > 0 ? 1 : 0);
  TrainSpec ts;
  ts.epochs = 3;
  ts.batch_size = 16;
  ts.patience = 2;
  ts.seed = 31;
  Network a(tiny_spec(32));
  Network b(tiny_spec(32));
  const Examples ex{views(xs), labels};
  const auto la = train(a, ex, ex, ts);
  const auto lb = train(b, ex, ex, ts);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_TRUE(*a.parameters()[i] == *b.parameters()[i]);
  }
  ASSERT_EQ(la.epochs.size(), lb.epochs.size());
  for (std::size_t e = 0; e < la.epochs.size(); ++e) {
    EXPECT_EQ(la.epochs[e].train_loss, lb.epochs[e].train_loss);
  }
}

TEST(Train, DivergenceNamesTheEpoch) {
  const auto xs = random_inputs(40, 16, 2, 10);
  std::vector<int> labels(16, 0);
  for (int i = 0; i < 8; ++i) labels[static_cast<std::size_t>(i)] = 1;
  TrainSpec ts;
  ts.epochs = 5;
  ts.patience = 4;
  ts.optimizer = Optimizer::sgd_momentum;
  ts.learning_rate = 1e300;
  Network net(tiny_spec(41));
  const Examples ex{views(xs), labels};
  try {
    train(net, ex, ex, ts);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Train, InvalidSpecRejected) {
  TrainSpec ts;
  ts.patience = ts.epochs;
  EXPECT_THROW(ts.validate(), Error);
  ts = TrainSpec{};
  ts.learning_rate = 0.0;
  EXPECT_THROW(ts.validate(), Error);
}

TEST(MaskedRegion, PerturbingOutsideThePatchChangesNothing) {
  const auto& fixture = testing::trained_fixture();
  const auto& bundle = fixture.result.bundle;
  std::mt19937_64 rng(50);
  std::normal_distribution<double> noise(0.0, 5.0);
  for (int i = 0; i < 10; ++i) {
    const auto& sample = fixture.data.test.samples[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < bundle.configs.size(); ++k) {
      for (const auto& span : enumerate_patches(sample.length(), bundle.configs[k])) {
        TimeSeriesSample perturbed = sample;
        for (int c = 0; c < sample.channels(); ++c) {
          for (int t = 0; t < sample.length(); ++t) {
            if (!span.contains(t)) perturbed.values(c, t) += noise(rng);
          }
        }
        const auto a = transform(sample, span.index, bundle.configs[k]);
        const auto b = transform(perturbed, span.index, bundle.configs[k]);
        EXPECT_EQ(bundle.network.forward(a.values), bundle.network.forward(b.values));
      }
    }
  }
}

}  // namespace
}  // namespace patchx
