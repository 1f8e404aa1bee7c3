#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cabin/tensor.hpp"

namespace cabin {

struct GradCheckOptions {
  double epsilon = 1e-3;
  double tolerance = 1e-2;
  // Denominator floor of the relative error; gradients below it are compared absolutely.
  double floor = 1e-4;
  // 0 checks every element; otherwise a seeded random subset across all inputs.
  std::size_t max_checks = 0;
  std::uint64_t seed = 0;
  // Skip points where a ReLU or max-pool decision (see DecisionTrace) differs
  // between x - eps, x and x + eps: the loss is not differentiable on that
  // interval, so the central difference is no oracle there. Sampled checks
  // draw a replacement point.
  bool skip_nonsmooth = true;
};

struct GradCheckResult {
  std::string name;
  double max_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // non-smooth points, see skip_nonsmooth
  // max_error below tolerance and the requested number of smooth points found.
  bool passed = false;
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor)
double gradient_error(double analytic, double numeric, double floor);

// Central-difference check of backward() for every (or a sampled subset of)
// element of `inputs`. `loss` must rebuild the graph from the current input
// data on each call.
GradCheckResult check_gradients(std::string name, const std::function<TensorD()>& loss,
                                std::vector<TensorD> inputs, const GradCheckOptions& options = {});

// Every per-op, per-loss and full-model finite-difference suite.
std::vector<GradCheckResult> run_gradcheck_suites(std::uint64_t seed = 2021);

}  // namespace cabin
