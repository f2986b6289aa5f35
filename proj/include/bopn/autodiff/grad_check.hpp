#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bopn/autodiff/tensor.hpp"

namespace bopn::ad {

/// A forward or finite-difference evaluation produced NaN or infinity.
class GradCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using DifferentiableOp = std::function<Tensor<double>(std::span<const Tensor<double>>)>;

struct GradCheckOptions {
  double step = 1e-5;
  std::uint64_t seed = 0;
  /// Fraction of elements per input compared against finite differences;
  /// at least one element of every input is always checked.
  double sample_fraction = 1.0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  std::size_t elements_checked = 0;
};

/// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);

/// Compares the analytic gradient of `op` against central differences.
/// Non-scalar outputs are reduced with a fixed random projection drawn from
/// `options.seed`. Every input must have requires_grad set.
GradCheckResult grad_check(const DifferentiableOp& op, std::span<const Tensor<double>> inputs,
                           const GradCheckOptions& options = {});

/// One named kernel check: builds random inputs from a seed, runs grad_check.
struct KernelCheck {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

/// Every kernel in the inventory, in a fixed order.
std::vector<KernelCheck> kernel_check_suite();

}  // namespace bopn::ad
