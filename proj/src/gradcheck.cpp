#include "patchx/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace patchx {

std::string GradientCheckReport::summary() const {
  std::ostringstream out;
  out << (passed ? "PASS" : "FAIL") << ": " << checked
      << " gradient entries, max relative error " << max_relative_error;
  if (refined > 0) out << " (" << refined << " refined at kinks)";
  if (passed) return out.str();
  for (const auto& w : worst) {
    out << "\n  " << w.tensor << "[" << w.index << "] analytic=" << w.analytic
        << " numeric=" << w.numeric << " rel=" << w.relative_error;
  }
  return out.str();
}

GradientCheckReport check_gradients(GradientProblem& problem, const GradientCheckOptions& options) {
  GradientCheckReport report;
  std::vector<GradientCheckEntry> entries;
  for (std::size_t i = 0; i < problem.parameters.size(); ++i) {
    Tensor& param = *problem.parameters[i];
    const Tensor& analytic = problem.analytic.at(i);
    if (analytic.size() != param.size()) {
      throw DimensionError("analytic gradient shape differs from parameter " + problem.names[i]);
    }
    for (std::size_t j = 0; j < param.size(); ++j) {
      const double original = param[j];
      double h = options.step * std::max(1.0, std::abs(original));
      if (problem.regime) {
        const auto base = problem.regime();
        const double min_h = h * 1e-6;
        bool shrunk = false;
        while (h > min_h) {
          param[j] = original + h;
          const bool up_same = problem.regime() == base;
          param[j] = original - h;
          const bool down_same = problem.regime() == base;
          param[j] = original;
          if (up_same && down_same) break;
          h /= 10.0;
          shrunk = true;
        }
        if (shrunk) ++report.refined;
      }
      param[j] = original + h;
      const double up = problem.loss();
      param[j] = original - h;
      const double down = problem.loss();
      param[j] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[j];
      const double scale = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / scale;
      entries.push_back({problem.names[i], j, a, numeric, std::isfinite(rel) ? rel : INFINITY});
    }
  }
  report.checked = entries.size();
  std::stable_sort(entries.begin(), entries.end(), [](const auto& x, const auto& y) {
    return x.relative_error > y.relative_error;
  });
  if (!entries.empty()) report.max_relative_error = entries.front().relative_error;
  report.passed = report.max_relative_error < options.tolerance;
  entries.resize(std::min(entries.size(), options.worst_count));
  report.worst = std::move(entries);
  return report;
}

namespace {

std::vector<std::string> parameter_names(const std::vector<nn::Layer>& layers) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto count = nn::layer_parameters(layers[i]).size();
    const std::string base = std::string(nn::layer_name(layers[i])) + "[" + std::to_string(i) + "]";
    if (count >= 1) names.push_back(base + ".weight");
    if (count >= 2) names.push_back(base + ".bias");
  }
  return names;
}

}  // namespace

GradientCheckReport gradient_check(Network& net, const Examples& batch,
                                   const GradientCheckOptions& options) {
  GradientProblem problem;
  problem.names = parameter_names(net.layers());
  problem.parameters = net.parameters();
  net.loss_and_gradients(batch.inputs, batch.labels, problem.analytic);
  problem.loss = [&net, &batch] {
    std::vector<Tensor> scratch;
    return net.loss_and_gradients(batch.inputs, batch.labels, scratch);
  };
  problem.regime = [&net, &batch] {
    const int length = net.spec().input_length;
    const int b = static_cast<int>(batch.size());
    Matrix x(net.spec().input_channels, static_cast<Eigen::Index>(b) * length);
    for (int i = 0; i < b; ++i) x.middleCols(static_cast<Eigen::Index>(i) * length, length) = *batch.inputs[i];
    std::vector<std::uint8_t> signs;
    for (const auto& layer : net.layers()) {
      if (std::holds_alternative<nn::Relu>(layer)) {
        for (Eigen::Index i = 0; i < x.size(); ++i) signs.push_back(x.data()[i] > 0.0 ? 1 : 0);
      }
      x = nn::layer_forward(layer, x, b, nullptr);
    }
    return signs;
  };
  return check_gradients(problem, options);
}

GradientCheckReport gradient_check_layer(nn::Layer& layer, const Matrix& input, int batch,
                                         std::uint64_t seed, const GradientCheckOptions& options) {
  nn::LayerCache cache;
  const Matrix out = nn::layer_forward(layer, input, batch, &cache);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Matrix projection(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < projection.size(); ++i) projection.data()[i] = dist(rng);

  // The input is treated as one more parameter tensor.
  Tensor input_tensor({static_cast<std::size_t>(input.rows()), static_cast<std::size_t>(input.cols())},
                      std::vector<double>(input.data(), input.data() + input.size()));

  GradientProblem problem;
  auto params = nn::layer_parameters(layer);
  std::vector<Tensor> grads;
  for (const auto* p : params) grads.emplace_back(p->shape());
  const Matrix din = nn::layer_backward(layer, projection, batch, cache, grads, true);

  const std::string base(nn::layer_name(layer));
  for (std::size_t i = 0; i < params.size(); ++i) {
    problem.names.push_back(base + (i == 0 ? ".weight" : ".bias"));
    problem.parameters.push_back(params[i]);
    problem.analytic.push_back(grads[i]);
  }
  problem.names.push_back(base + ".input");
  problem.parameters.push_back(&input_tensor);
  problem.analytic.emplace_back(input_tensor.shape(),
                                std::vector<double>(din.data(), din.data() + din.size()));
  problem.loss = [&] {
    const Matrix x = input_tensor.as_matrix();
    return (nn::layer_forward(layer, x, batch, nullptr).array() * projection.array()).sum();
  };
  return check_gradients(problem, options);
}

}  // namespace patchx
