#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "patchx/network.hpp"

namespace patchx {

struct GradientCheckOptions {
  double tolerance = 1e-3;
  /// Central-difference step is `step * max(1, |theta|)`.
  double step = 1e-3;
  /// Relative errors are measured against max(|analytic|, |numeric|, floor).
  double floor = 1e-8;
  std::size_t worst_count = 5;
};

struct GradientCheckEntry {
  std::string tensor;  // e.g. "conv1d[0].weight"
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradientCheckReport {
  bool passed = true;
  std::size_t checked = 0;
  double max_relative_error = 0.0;
  /// Entries whose step was shrunk because the perturbation crossed a kink.
  std::size_t refined = 0;
  std::vector<GradientCheckEntry> worst;  // largest errors first

  std::string summary() const;
};

/// A differentiable quantity: named parameter tensors, the scalar to check,
/// and its analytic gradients (same order and shapes as `parameters`).
struct GradientProblem {
  std::vector<std::string> names;
  std::vector<Tensor*> parameters;
  std::function<double()> loss;
  std::vector<Tensor> analytic;
  /// Optional piecewise-regime signature (e.g. ReLU sign pattern). When the
  /// signature at theta +/- h differs from the one at theta, the step is
  /// divided by 10 until it matches, so differences never straddle a kink.
  std::function<std::vector<std::uint8_t>()> regime;
};

/// Compares `problem.analytic` against central finite differences of
/// `problem.loss`, perturbing each parameter entry in place and restoring it.
GradientCheckReport check_gradients(GradientProblem& problem,
                                    const GradientCheckOptions& options = {});

/// Whole-network check of the mean batch cross-entropy. ReLU sign patterns
/// serve as the regime signature.
GradientCheckReport gradient_check(Network& net, const Examples& batch,
                                   const GradientCheckOptions& options = {});

/// Single-layer check with the scalar sum(projection .* layer(input)); checks
/// the layer parameters and the input gradient.
GradientCheckReport gradient_check_layer(nn::Layer& layer, const Matrix& input, int batch,
                                         std::uint64_t seed,
                                         const GradientCheckOptions& options = {});

}  // namespace patchx
