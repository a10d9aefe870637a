#include "patchx/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace patchx {

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Eigen::Map<Matrix> Tensor::as_matrix() {
  const auto rows = static_cast<Eigen::Index>(shape_.empty() ? 1 : shape_[0]);
  return {values_.data(), rows, static_cast<Eigen::Index>(values_.size()) / rows};
}

Eigen::Map<const Matrix> Tensor::as_matrix() const {
  const auto rows = static_cast<Eigen::Index>(shape_.empty() ? 1 : shape_[0]);
  return {values_.data(), rows, static_cast<Eigen::Index>(values_.size()) / rows};
}

std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity" || name == "linear") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::vector<ConvBlockSpec> NetworkSpec::default_blocks() {
  return {{32, 3, Activation::relu}, {64, 3, Activation::relu}, {64, 3, Activation::relu}};
}

void NetworkSpec::validate() const {
  if (input_channels <= 0 || input_length <= 0) {
    throw ConfigError("network input shape must be positive");
  }
  if (class_count < 2) throw ConfigError("network needs at least 2 classes");
  if (blocks.empty()) throw ConfigError("network needs at least one conv block");
  for (const auto& b : blocks) {
    if (b.filters <= 0 || b.kernel_size <= 0) {
      throw ConfigError("conv block filters and kernel size must be positive");
    }
    if (b.kernel_size > input_length) {
      throw ConfigError("kernel size " + std::to_string(b.kernel_size) +
                        " exceeds input length " + std::to_string(input_length));
    }
  }
}

std::vector<ConvBlockSpec> parse_blocks(std::string_view text) {
  std::vector<ConvBlockSpec> blocks;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    std::string token(text.substr(start, end - start));
    start = end + 1;
    if (token.empty()) continue;
    ConvBlockSpec block;
    auto colon = token.find(':');
    if (colon != std::string::npos) {
      block.activation = parse_activation(token.substr(colon + 1));
      token = token.substr(0, colon);
    }
    auto x = token.find('x');
    try {
      std::size_t used = 0;
      block.filters = std::stoi(token.substr(0, x), &used);
      if (x != std::string::npos) block.kernel_size = std::stoi(token.substr(x + 1));
    } catch (const std::exception&) {
      throw ConfigError("invalid conv block '" + token + "', expected FILTERSxKERNEL");
    }
    blocks.push_back(block);
  }
  if (blocks.empty()) throw ConfigError("empty conv block list");
  return blocks;
}

std::string format_blocks(std::span<const ConvBlockSpec> blocks) {
  std::string out;
  for (const auto& b : blocks) {
    if (!out.empty()) out += ',';
    out += std::to_string(b.filters) + "x" + std::to_string(b.kernel_size);
    if (b.activation != Activation::relu) out += ":" + std::string(to_string(b.activation));
  }
  return out;
}

namespace nn {

// --- Conv1d ---------------------------------------------------------------------

Conv1d::Conv1d(int in, int out, int kernel)
    : in_channels(in),
      out_channels(out),
      kernel_size(kernel),
      weight({static_cast<std::size_t>(out), static_cast<std::size_t>(in),
              static_cast<std::size_t>(kernel)}),
      bias({static_cast<std::size_t>(out)}) {}

Matrix Conv1d::im2col(const Matrix& in, int batch) const {
  const int length = static_cast<int>(in.cols()) / batch;
  const int pad = (kernel_size - 1) / 2;
  Matrix col = Matrix::Zero(static_cast<Eigen::Index>(in_channels) * kernel_size, in.cols());
  for (int ci = 0; ci < in_channels; ++ci) {
    const double* src = in.row(ci).data();
    for (int k = 0; k < kernel_size; ++k) {
      double* dst = col.row(static_cast<Eigen::Index>(ci) * kernel_size + k).data();
      const int shift = k - pad;
      const int t0 = std::max(0, -shift);
      const int t1 = std::min(length, length - shift);
      for (int b = 0; b < batch; ++b) {
        const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(b) * length;
        for (int t = t0; t < t1; ++t) dst[base + t] = src[base + t + shift];
      }
    }
  }
  return col;
}

Matrix Conv1d::forward(const Matrix& in, int batch, LayerCache* cache) const {
  if (in.rows() != in_channels) {
    throw DimensionError("conv layer expects " + std::to_string(in_channels) +
                         " input channels, got " + std::to_string(in.rows()));
  }
  Matrix col = im2col(in, batch);
  Matrix out(out_channels, in.cols());
  out.noalias() = weight.as_matrix() * col;
  const Eigen::Map<const Eigen::VectorXd> b(bias.data(), out_channels);
  out.colwise() += b;
  if (cache != nullptr) {
    cache->saved = std::move(col);
    cache->length = static_cast<int>(in.cols()) / batch;
  }
  return out;
}

Matrix Conv1d::backward(const Matrix& dout, int batch, const LayerCache& cache,
                        std::span<Tensor> grads, bool need_input_grad) const {
  const Matrix& col = cache.saved;
  auto dw = grads[0].as_matrix();
  dw.noalias() = dout * col.transpose();
  Eigen::Map<Eigen::VectorXd> db(grads[1].data(), out_channels);
  db = dout.rowwise().sum();
  if (!need_input_grad) return {};

  Matrix dcol(col.rows(), col.cols());
  dcol.noalias() = weight.as_matrix().transpose() * dout;
  const int length = cache.length;
  const int pad = (kernel_size - 1) / 2;
  Matrix din = Matrix::Zero(in_channels, dout.cols());
  for (int ci = 0; ci < in_channels; ++ci) {
    double* dst = din.row(ci).data();
    for (int k = 0; k < kernel_size; ++k) {
      const double* src = dcol.row(static_cast<Eigen::Index>(ci) * kernel_size + k).data();
      const int shift = k - pad;
      const int t0 = std::max(0, -shift);
      const int t1 = std::min(length, length - shift);
      for (int b = 0; b < batch; ++b) {
        const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(b) * length;
        for (int t = t0; t < t1; ++t) dst[base + t + shift] += src[base + t];
      }
    }
  }
  return din;
}

// --- Relu -------------------------------------------------------------------------

Matrix Relu::forward(const Matrix& in, int /*batch*/, LayerCache* cache) const {
  Matrix out = in.cwiseMax(0.0);
  if (cache != nullptr) cache->saved = out;
  return out;
}

Matrix Relu::backward(const Matrix& dout, int /*batch*/, const LayerCache& cache,
                      std::span<Tensor> /*grads*/, bool /*need_input_grad*/) const {
  return (cache.saved.array() > 0.0).select(dout, 0.0);
}

// --- GlobalAvgPool -----------------------------------------------------------------

Matrix GlobalAvgPool::forward(const Matrix& in, int batch, LayerCache* cache) const {
  const int length = static_cast<int>(in.cols()) / batch;
  Matrix out(in.rows(), batch);
  for (Eigen::Index c = 0; c < in.rows(); ++c) {
    for (int b = 0; b < batch; ++b) {
      out(c, b) = in.row(c).segment(static_cast<Eigen::Index>(b) * length, length).mean();
    }
  }
  if (cache != nullptr) cache->length = length;
  return out;
}

Matrix GlobalAvgPool::backward(const Matrix& dout, int batch, const LayerCache& cache,
                               std::span<Tensor> /*grads*/, bool /*need_input_grad*/) const {
  const int length = cache.length;
  Matrix din(dout.rows(), static_cast<Eigen::Index>(batch) * length);
  const double scale = 1.0 / length;
  for (Eigen::Index c = 0; c < dout.rows(); ++c) {
    for (int b = 0; b < batch; ++b) {
      din.row(c).segment(static_cast<Eigen::Index>(b) * length, length).setConstant(dout(c, b) *
                                                                                   scale);
    }
  }
  return din;
}

// --- Dense ------------------------------------------------------------------------

Dense::Dense(int in, int out)
    : in_features(in),
      out_features(out),
      weight({static_cast<std::size_t>(out), static_cast<std::size_t>(in)}),
      bias({static_cast<std::size_t>(out)}) {}

Matrix Dense::forward(const Matrix& in, int /*batch*/, LayerCache* cache) const {
  if (in.rows() != in_features) {
    throw DimensionError("dense layer expects " + std::to_string(in_features) + " features, got " +
                         std::to_string(in.rows()));
  }
  Matrix out(out_features, in.cols());
  out.noalias() = weight.as_matrix() * in;
  const Eigen::Map<const Eigen::VectorXd> b(bias.data(), out_features);
  out.colwise() += b;
  if (cache != nullptr) cache->saved = in;
  return out;
}

Matrix Dense::backward(const Matrix& dout, int /*batch*/, const LayerCache& cache,
                       std::span<Tensor> grads, bool need_input_grad) const {
  auto dw = grads[0].as_matrix();
  dw.noalias() = dout * cache.saved.transpose();
  Eigen::Map<Eigen::VectorXd> db(grads[1].data(), out_features);
  db = dout.rowwise().sum();
  if (!need_input_grad) return {};
  Matrix din(in_features, dout.cols());
  din.noalias() = weight.as_matrix().transpose() * dout;
  return din;
}

// --- variant helpers -----------------------------------------------------------------

std::string_view layer_name(const Layer& layer) {
  struct Visitor {
    std::string_view operator()(const Conv1d&) const { return "conv1d"; }
    std::string_view operator()(const Relu&) const { return "relu"; }
    std::string_view operator()(const GlobalAvgPool&) const { return "global_avg_pool"; }
    std::string_view operator()(const Dense&) const { return "dense"; }
  };
  return std::visit(Visitor{}, layer);
}

std::vector<Tensor*> layer_parameters(Layer& layer) {
  return std::visit([](auto& l) { return l.parameters(); }, layer);
}

std::vector<const Tensor*> layer_parameters(const Layer& layer) {
  return std::visit([](const auto& l) { return l.parameters(); }, layer);
}

Matrix layer_forward(const Layer& layer, const Matrix& in, int batch, LayerCache* cache) {
  return std::visit([&](const auto& l) { return l.forward(in, batch, cache); }, layer);
}

Matrix layer_backward(const Layer& layer, const Matrix& dout, int batch, const LayerCache& cache,
                      std::span<Tensor> grads, bool need_input_grad) {
  return std::visit(
      [&](const auto& l) { return l.backward(dout, batch, cache, grads, need_input_grad); },
      layer);
}

Matrix softmax_columns(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    const double peak = logits.col(b).maxCoeff();
    out.col(b) = (logits.col(b).array() - peak).exp();
    out.col(b) /= out.col(b).sum();
  }
  return out;
}

}  // namespace nn

double patch_cross_entropy(std::span<const double> prediction, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= prediction.size()) {
    throw IndexError("label " + std::to_string(label) + " outside [0, " +
                     std::to_string(prediction.size()) + ")");
  }
  return -std::log(std::max(prediction[static_cast<std::size_t>(label)], kLogClamp));
}

// --- Network ------------------------------------------------------------------------

Network::Network(const NetworkSpec& spec) : spec_(spec) {
  spec_.validate();
  std::mt19937_64 rng(spec_.seed);
  auto init = [&rng](Tensor& t, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.values()) v = dist(rng);
  };
  int channels = spec_.input_channels;
  for (const auto& block : spec_.blocks) {
    nn::Conv1d conv(channels, block.filters, block.kernel_size);
    init(conv.weight, std::sqrt(6.0 / (channels * block.kernel_size)));
    layers_.emplace_back(std::move(conv));
    if (block.activation == Activation::relu) layers_.emplace_back(nn::Relu{});
    channels = block.filters;
  }
  layers_.emplace_back(nn::GlobalAvgPool{});
  nn::Dense head(channels, spec_.class_count);
  init(head.weight, 1.0 / std::sqrt(static_cast<double>(channels)));
  layers_.emplace_back(std::move(head));
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  for (auto& layer : layers_) {
    auto p = nn::layer_parameters(layer);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<const Tensor*> Network::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& layer : layers_) {
    auto p = nn::layer_parameters(layer);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

std::vector<Tensor> Network::zero_gradients() const {
  std::vector<Tensor> grads;
  for (const auto* p : parameters()) grads.emplace_back(p->shape());
  return grads;
}

Matrix Network::pack(std::span<const Matrix* const> inputs) const {
  const int length = spec_.input_length;
  Matrix packed(spec_.input_channels, static_cast<Eigen::Index>(inputs.size()) * length);
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    const Matrix& x = *inputs[b];
    if (x.rows() != spec_.input_channels || x.cols() != length) {
      throw DimensionError("network expects input " + std::to_string(spec_.input_channels) + "x" +
                           std::to_string(length) + ", got " + std::to_string(x.rows()) + "x" +
                           std::to_string(x.cols()));
    }
    packed.middleCols(static_cast<Eigen::Index>(b) * length, length) = x;
  }
  return packed;
}

Matrix Network::logits(const Matrix& packed, int batch,
                       std::vector<nn::LayerCache>* caches) const {
  Matrix act = packed;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    act = nn::layer_forward(layers_[i], act, batch, caches ? &(*caches)[i] : nullptr);
  }
  return act;
}

Matrix Network::forward_batch(std::span<const Matrix* const> inputs) const {
  if (inputs.empty()) return Matrix(0, spec_.class_count);
  const int batch = static_cast<int>(inputs.size());
  return nn::softmax_columns(logits(pack(inputs), batch, nullptr)).transpose();
}

std::vector<double> Network::forward(const Matrix& input) const {
  const Matrix* ptr = &input;
  Matrix probs = forward_batch(std::span<const Matrix* const>(&ptr, 1));
  return {probs.data(), probs.data() + probs.size()};
}

Matrix Network::predict(std::span<const Matrix* const> inputs, int chunk) const {
  Matrix out(static_cast<Eigen::Index>(inputs.size()), spec_.class_count);
  for (std::size_t start = 0; start < inputs.size(); start += static_cast<std::size_t>(chunk)) {
    const auto n = std::min(inputs.size() - start, static_cast<std::size_t>(chunk));
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) =
        forward_batch(inputs.subspan(start, n));
  }
  return out;
}

double Network::loss_and_gradients(std::span<const Matrix* const> inputs,
                                   std::span<const int> labels,
                                   std::vector<Tensor>& grads) const {
  if (inputs.empty() || inputs.size() != labels.size()) {
    throw ValidationError("batch must be non-empty with one label per input");
  }
  const int batch = static_cast<int>(inputs.size());
  std::vector<nn::LayerCache> caches(layers_.size());
  Matrix probs = nn::softmax_columns(logits(pack(inputs), batch, &caches));

  double loss = 0.0;
  Matrix delta = probs;
  for (int b = 0; b < batch; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= spec_.class_count) {
      throw IndexError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(spec_.class_count) + ")");
    }
    loss += -std::log(std::max(probs(y, b), kLogClamp));
    delta(y, b) -= 1.0;
  }
  delta /= batch;

  if (grads.size() != parameters().size()) grads = zero_gradients();
  std::size_t offset = grads.size();
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const std::size_t count = nn::layer_parameters(layers_[i]).size();
    offset -= count;
    const bool need_input = i > 0;
    delta = nn::layer_backward(layers_[i], delta, batch, caches[i],
                               std::span<Tensor>(grads).subspan(offset, count), need_input);
  }
  return loss / batch;
}

// --- dataset helpers --------------------------------------------------------------------

Examples as_examples(std::span<const PatchInstance> patches) {
  Examples ex;
  ex.inputs.reserve(patches.size());
  ex.labels.reserve(patches.size());
  for (const auto& p : patches) {
    ex.inputs.push_back(&p.values);
    ex.labels.push_back(p.label);
  }
  return ex;
}

Examples as_examples(const Dataset& dataset) {
  Examples ex;
  for (const auto& s : dataset.samples) {
    ex.inputs.push_back(&s.values);
    ex.labels.push_back(s.label);
  }
  return ex;
}

double dataset_loss(const Network& net, const Examples& examples) {
  if (examples.empty()) throw ValidationError("dataset_loss needs at least one patch");
  const Matrix probs = net.predict(examples.inputs);
  // Neumaier summation keeps the mean independent of patch order to ~1 ulp.
  double sum = 0.0;
  double compensation = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto row = probs.row(static_cast<Eigen::Index>(i));
    const double term =
        patch_cross_entropy(std::span<const double>(row.data(), row.size()), examples.labels[i]);
    const double t = sum + term;
    if (std::abs(sum) >= std::abs(term)) {
      compensation += (sum - t) + term;
    } else {
      compensation += (term - t) + sum;
    }
    sum = t;
  }
  return (sum + compensation) / static_cast<double>(examples.size());
}

double accuracy(const Network& net, const Examples& examples) {
  if (examples.empty()) return 0.0;
  const Matrix probs = net.predict(examples.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto row = probs.row(static_cast<Eigen::Index>(i));
    if (argmax_lowest(row) == examples.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

// --- training -------------------------------------------------------------------------------

std::string_view to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd-momentum"; }

Optimizer parse_optimizer(std::string_view name) {
  if (name == "adam") return Optimizer::adam;
  if (name == "sgd-momentum" || name == "sgd") return Optimizer::sgd_momentum;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

void TrainSpec::validate() const {
  if (epochs <= 0 || batch_size <= 0 || !(learning_rate > 0.0) || patience <= 0) {
    throw ConfigError("training epochs, batch size, learning rate and patience must be positive");
  }
  if (patience >= epochs) throw ConfigError("early-stopping patience must be below epochs");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
}

namespace {

class OptimizerState {
 public:
  OptimizerState(const TrainSpec& spec, const Network& net)
      : spec_(spec), first_(net.zero_gradients()), second_(net.zero_gradients()) {}

  void step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
    ++t_;
    const double lr = spec_.learning_rate;
    if (spec_.optimizer == Optimizer::adam) {
      constexpr double beta1 = 0.9;
      constexpr double beta2 = 0.999;
      constexpr double eps = 1e-8;
      const double c1 = 1.0 - std::pow(beta1, t_);
      const double c2 = 1.0 - std::pow(beta2, t_);
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i]->values();
        auto g = grads[i].values();
        auto m = first_[i].values();
        auto v = second_[i].values();
        for (std::size_t j = 0; j < theta.size(); ++j) {
          m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
          v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
          theta[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
        }
      }
    } else {
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i]->values();
        auto g = grads[i].values();
        auto vel = first_[i].values();
        for (std::size_t j = 0; j < theta.size(); ++j) {
          vel[j] = spec_.momentum * vel[j] - lr * g[j];
          theta[j] += vel[j];
        }
      }
    }
  }

 private:
  TrainSpec spec_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  long t_ = 0;
};

std::vector<Tensor> snapshot(const Network& net) {
  std::vector<Tensor> out;
  for (const auto* p : net.parameters()) out.push_back(*p);
  return out;
}

}  // namespace

TrainLog train(Network& net, const Examples& train_set, const Examples& val_set,
               const TrainSpec& spec) {
  spec.validate();
  if (train_set.empty()) throw ValidationError("training set is empty");
  if (val_set.empty()) throw ValidationError("validation set is empty");

  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  OptimizerState optimizer(spec, net);
  auto params = net.parameters();
  auto grads = net.zero_gradients();
  std::vector<const Matrix*> batch_inputs;
  std::vector<int> batch_labels;

  TrainLog log;
  log.best_val_accuracy = -1.0;
  std::vector<Tensor> best = snapshot(net);
  int since_best = 0;
  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(spec.batch_size)) {
      const auto n = std::min(order.size() - start, static_cast<std::size_t>(spec.batch_size));
      batch_inputs.clear();
      batch_labels.clear();
      for (std::size_t j = 0; j < n; ++j) {
        batch_inputs.push_back(train_set.inputs[order[start + j]]);
        batch_labels.push_back(train_set.labels[order[start + j]]);
      }
      const double loss = net.loss_and_gradients(batch_inputs, batch_labels, grads);
      if (!std::isfinite(loss)) {
        throw TrainingError("training diverged in epoch " + std::to_string(epoch) +
                            " (loss is not finite)");
      }
      loss_sum += loss * static_cast<double>(n);
      optimizer.step(params, grads);
    }
    for (const auto* p : params) {
      if (!p->all_finite()) {
        throw TrainingError("training diverged in epoch " + std::to_string(epoch) +
                            " (non-finite parameters)");
      }
    }
    const double val_acc = accuracy(net, val_set);
    log.epochs.push_back({epoch, loss_sum / static_cast<double>(order.size()), val_acc});
    if (val_acc > log.best_val_accuracy) {
      log.best_val_accuracy = val_acc;
      log.best_epoch = epoch;
      best = snapshot(net);
      since_best = 0;
    } else if (++since_best >= spec.patience) {
      log.stopped_early = epoch < spec.epochs;
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) *params[i] = best[i];
  return log;
}

}  // namespace patchx
