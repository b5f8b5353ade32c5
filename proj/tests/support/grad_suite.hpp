#pragma once

// Central finite-difference checks for every differentiable tensor op.

#include <cstdint>
#include <string>
#include <vector>

namespace onevl::support {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;
/// Denominator floor for the relative error, so that entries whose true
/// gradient is ~0 are compared absolutely.
inline constexpr double kGradFloor = 1e-6;

struct GradCheck {
  std::string op;
  int trials = 0;
  double max_rel_err = 0.0;
};

/// `trials` random instances per op; each compares the analytic gradient of
/// sum(op(inputs) * R), R a fixed random weighting, against central
/// differences for every input element.
std::vector<GradCheck> run_gradient_suite(int trials, std::uint64_t seed);

}  // namespace onevl::support
