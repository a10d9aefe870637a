#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "patchx/common.hpp"
#include "patchx/data.hpp"
#include "patchx/patching.hpp"
#include "patchx/tensor.hpp"

namespace patchx {

enum class Activation { relu, identity };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

struct ConvBlockSpec {
  int filters = 32;
  int kernel_size = 3;
  Activation activation = Activation::relu;

  friend bool operator==(const ConvBlockSpec&, const ConvBlockSpec&) = default;
};

/// Conv blocks ("same" length, stride 1), global average pooling, then a
/// dense layer to `class_count` logits followed by softmax.
struct NetworkSpec {
  int input_channels = 0;
  int input_length = 0;
  int class_count = 2;
  std::vector<ConvBlockSpec> blocks = default_blocks();
  std::uint64_t seed = 0;

  void validate() const;

  /// 32/64/64 filters, kernel 3, ReLU.
  static std::vector<ConvBlockSpec> default_blocks();
  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// "32x3,64x3,64x3" style block list; an optional ":identity" suffix drops the ReLU.
std::vector<ConvBlockSpec> parse_blocks(std::string_view text);
std::string format_blocks(std::span<const ConvBlockSpec> blocks);

namespace nn {

/// Per-layer state saved by a training forward pass.
struct LayerCache {
  Matrix saved;
  int length = 0;
};

// Activations are [channels x (batch * length)] with sample b occupying
// columns [b*length, (b+1)*length); after pooling they are [features x batch].

class Conv1d {
 public:
  Conv1d(int in_channels, int out_channels, int kernel_size);

  Matrix forward(const Matrix& in, int batch, LayerCache* cache) const;
  Matrix backward(const Matrix& dout, int batch, const LayerCache& cache,
                  std::span<Tensor> grads, bool need_input_grad) const;

  std::vector<Tensor*> parameters() { return {&weight, &bias}; }
  std::vector<const Tensor*> parameters() const { return {&weight, &bias}; }

  int in_channels = 0;
  int out_channels = 0;
  int kernel_size = 0;
  Tensor weight;  // [out, in, kernel]
  Tensor bias;    // [out]

 private:
  Matrix im2col(const Matrix& in, int batch) const;
};

class Relu {
 public:
  Matrix forward(const Matrix& in, int batch, LayerCache* cache) const;
  Matrix backward(const Matrix& dout, int batch, const LayerCache& cache,
                  std::span<Tensor> grads, bool need_input_grad) const;
  std::vector<Tensor*> parameters() { return {}; }
  std::vector<const Tensor*> parameters() const { return {}; }
};

class GlobalAvgPool {
 public:
  Matrix forward(const Matrix& in, int batch, LayerCache* cache) const;
  Matrix backward(const Matrix& dout, int batch, const LayerCache& cache,
                  std::span<Tensor> grads, bool need_input_grad) const;
  std::vector<Tensor*> parameters() { return {}; }
  std::vector<const Tensor*> parameters() const { return {}; }
};

class Dense {
 public:
  Dense(int in_features, int out_features);

  Matrix forward(const Matrix& in, int batch, LayerCache* cache) const;
  Matrix backward(const Matrix& dout, int batch, const LayerCache& cache,
                  std::span<Tensor> grads, bool need_input_grad) const;
  std::vector<Tensor*> parameters() { return {&weight, &bias}; }
  std::vector<const Tensor*> parameters() const { return {&weight, &bias}; }

  int in_features = 0;
  int out_features = 0;
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
};

using Layer = std::variant<Conv1d, Relu, GlobalAvgPool, Dense>;

std::string_view layer_name(const Layer& layer);
std::vector<Tensor*> layer_parameters(Layer& layer);
std::vector<const Tensor*> layer_parameters(const Layer& layer);
Matrix layer_forward(const Layer& layer, const Matrix& in, int batch, LayerCache* cache);
Matrix layer_backward(const Layer& layer, const Matrix& dout, int batch, const LayerCache& cache,
                      std::span<Tensor> grads, bool need_input_grad);

/// Column-wise softmax of [classes x batch] logits.
Matrix softmax_columns(const Matrix& logits);

}  // namespace nn

/// Clamp applied inside the logarithm of the cross-entropy.
inline constexpr double kLogClamp = 1e-12;

/// -log(max(prediction[label], 1e-12)). Throws IndexError for a bad label.
double patch_cross_entropy(std::span<const double> prediction, int label);

/// Inputs for one pass: non-owning views of [channels x length] matrices.
struct Examples {
  std::vector<const Matrix*> inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }
};

class Network {
 public:
  Network() = default;
  /// Builds the layers and initializes weights uniformly with fan-in scaling
  /// from `spec.seed`. Biases start at zero.
  explicit Network(const NetworkSpec& spec);

  const NetworkSpec& spec() const { return spec_; }
  int class_count() const { return spec_.class_count; }

  /// Softmax over classes for one [channels x length] input.
  std::vector<double> forward(const Matrix& input) const;
  /// Softmax rows [batch x classes].
  Matrix forward_batch(std::span<const Matrix* const> inputs) const;
  /// Softmax rows for any number of inputs, evaluated in chunks of `chunk`.
  Matrix predict(std::span<const Matrix* const> inputs, int chunk = 256) const;

  /// Mean cross-entropy over the batch; gradients of that mean are written
  /// into `grads` (shaped like parameters(), overwritten).
  double loss_and_gradients(std::span<const Matrix* const> inputs, std::span<const int> labels,
                            std::vector<Tensor>& grads) const;

  std::vector<Tensor> zero_gradients() const;
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;

  std::vector<nn::Layer>& layers() { return layers_; }
  const std::vector<nn::Layer>& layers() const { return layers_; }

 private:
  Matrix pack(std::span<const Matrix* const> inputs) const;
  Matrix logits(const Matrix& packed, int batch, std::vector<nn::LayerCache>* caches) const;

  NetworkSpec spec_;
  std::vector<nn::Layer> layers_;
};

/// Mean patch cross-entropy over all examples (compensated summation).
/// Throws ValidationError when empty.
double dataset_loss(const Network& net, const Examples& examples);

Examples as_examples(std::span<const PatchInstance> patches);
Examples as_examples(const Dataset& dataset);

/// Fraction of examples whose argmax matches the label.
double accuracy(const Network& net, const Examples& examples);

// --- training ------------------------------------------------------------------

enum class Optimizer { adam, sgd_momentum };

std::string_view to_string(Optimizer o);
Optimizer parse_optimizer(std::string_view name);

struct TrainSpec {
  int epochs = 50;
  int batch_size = 64;
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  int patience = 5;  // epochs without validation-accuracy improvement
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  bool stopped_early = false;
};

/// Mini-batch training of the mean cross-entropy. Restores the parameters of
/// the epoch with the best validation accuracy. Serial and deterministic for
/// a fixed seed. Throws TrainingError when the loss stops being finite.
TrainLog train(Network& net, const Examples& train_set, const Examples& val_set,
               const TrainSpec& spec);

}  // namespace patchx
