#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vinet/tensor.hpp"

namespace vinet {

// Numeric verification built into the library so the CLI can expose it:
// finite-difference gradient checks for every differentiable operation
// and the spherical-convolution equivariance measurements.

/// A differentiable scalar function of some flat double arrays.
/// eval(nullptr) returns the value; eval(&grads) additionally fills one
/// gradient vector per input array (aligned, sized like the array).
struct GradProblem {
  std::vector<std::pair<Shape, std::vector<double>*>> inputs;
  std::function<double(std::vector<std::vector<double>>* grads_out)> eval;
};

/// Worst normalized deviation between the analytic gradient and central
/// finite differences (step 1e-6): entries are compared relatively at
/// max(|a|,|n|), except entries below 1e-8 in magnitude, which are
/// compared absolutely at 1e-8 (scored so that 1e-5 stays the pass line).
double gradcheck_max_error(const GradProblem& problem, double step = 1e-6);

struct GradCheckReport {
  std::string op;
  double worst_error = 0.0;
  bool pass = false;
};

std::vector<std::string> gradcheck_names();
GradCheckReport run_gradcheck(const std::string& name);
std::vector<GradCheckReport> run_all_gradchecks();

struct EquivarianceReport {
  /// max |spa_sconv(shift(x)) - shift(spa_sconv(x))| over random trials
  double max_shift_error = 0.0;
  /// (resolution, mean relative commutator norm) of conv vs rotation
  /// resampling over random rotations of a smooth map
  std::vector<std::pair<int, double>> convergence;
};

/// Shift-equivariance at `resolution` over `trials` random input/kernel
/// pairs, plus the 16/32/64 resampling-convergence table.
EquivarianceReport check_equivariance(int trials, int resolution,
                                      std::uint64_t seed);

}  // namespace vinet
