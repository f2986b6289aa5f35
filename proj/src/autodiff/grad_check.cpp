#include "bopn/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "bopn/autodiff/kernels.hpp"

namespace bopn::ad {
namespace {

double scalar_value(const Tensor<double>& out, std::span<const double> projection) {
  if (out.size() == 1) return out.item();
  double total = 0.0;
  for (std::size_t k = 0; k < out.size(); ++k) total += out.values()[k] * projection[k];
  return total;
}

void require_finite(double value, const char* where) {
  if (!std::isfinite(value))
    throw GradCheckError(fmt::format("grad_check: non-finite {} ({})", where, value));
}

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> uniform(-scale, scale);
  std::vector<double> values(element_count(shape));
  for (auto& v : values) v = uniform(rng);
  return Tensor<double>::from(std::move(shape), std::move(values), true);
}

}  // namespace

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradCheckResult grad_check(const DifferentiableOp& op, std::span<const Tensor<double>> inputs,
                           const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("grad_check: step must be > 0");
  for (const auto& t : inputs) {
    if (!t.requires_grad()) throw std::invalid_argument("grad_check: input without requires_grad");
    for (double v : t.values()) require_finite(v, "input");
  }
  std::vector<Tensor<double>> args(inputs.begin(), inputs.end());
  for (auto& t : args) t.zero_grad();

  auto output = op(args);
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  std::vector<double> projection(output.size());
  for (auto& p : projection) p = uniform(rng);
  for (double v : output.values()) require_finite(v, "forward output");

  auto loss = output.size() == 1
                  ? output
                  : dot(output, Tensor<double>::from(output.shape(), projection));
  backward(loss);

  GradCheckResult result;
  std::bernoulli_distribution pick(std::clamp(options.sample_fraction, 0.0, 1.0));
  for (std::size_t a = 0; a < args.size(); ++a) {
    auto& tensor = args[a];
    std::vector<double> analytic(tensor.size(), 0.0);
    if (tensor.has_grad()) std::copy(tensor.grad().begin(), tensor.grad().end(), analytic.begin());
    std::vector<std::size_t> chosen;
    for (std::size_t k = 0; k < tensor.size(); ++k)
      if (options.sample_fraction >= 1.0 || pick(rng)) chosen.push_back(k);
    if (chosen.empty()) chosen.push_back(std::uniform_int_distribution<std::size_t>(0, tensor.size() - 1)(rng));

    for (std::size_t k : chosen) {
      auto values = tensor.mutable_values();
      const double original = values[k];
      values[k] = original + options.step;
      const double plus = scalar_value(op(args), projection);
      values[k] = original - options.step;
      const double minus = scalar_value(op(args), projection);
      values[k] = original;
      require_finite(plus, "perturbed forward");
      require_finite(minus, "perturbed forward");
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double err = relative_error(analytic[k], numeric);
      ++result.elements_checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_input = a;
        result.worst_element = k;
      }
    }
  }
  for (auto& t : args) t.zero_grad();
  return result;
}

std::vector<KernelCheck> kernel_check_suite() {
  using Inputs = std::span<const Tensor<double>>;
  auto check = [](std::vector<Shape> shapes, DifferentiableOp op, double scale = 1.0) {
    return [shapes = std::move(shapes), op = std::move(op), scale](std::uint64_t seed) {
      std::mt19937_64 rng(seed * 7919 + 17);
      std::vector<Tensor<double>> inputs;
      for (const auto& s : shapes) inputs.push_back(random_tensor(s, rng, scale));
      return grad_check(op, inputs, {.step = 1e-5, .seed = seed});
    };
  };

  std::vector<KernelCheck> suite;
  suite.push_back({"add", check({{3, 4}, {3, 4}}, [](Inputs x) { return add(x[0], x[1]); })});
  suite.push_back({"mul", check({{3, 4}, {3, 4}}, [](Inputs x) { return mul(x[0], x[1]); })});
  suite.push_back({"sum", check({{2, 5}}, [](Inputs x) { return sum(x[0]); })});
  suite.push_back({"dot", check({{6}, {6}}, [](Inputs x) { return dot(x[0], x[1]); })});
  suite.push_back({"matmul", check({{3, 4}, {4, 5}}, [](Inputs x) { return matmul(x[0], x[1]); })});
  suite.push_back({"linear", check({{3, 4}, {4, 2}, {2}},
                                   [](Inputs x) { return linear(x[0], x[1], x[2]); })});
  suite.push_back({"reshape", check({{2, 6}}, [](Inputs x) { return reshape(x[0], {3, 4}); })});
  suite.push_back({"concat_cols", check({{3, 2}, {3, 4}}, [](Inputs x) { return concat_cols(x); })});
  suite.push_back({"concat_rows", check({{2, 3}, {4, 3}}, [](Inputs x) { return concat_rows(x); })});
  suite.push_back({"slice_rows", check({{5, 3}}, [](Inputs x) { return slice_rows(x[0], 1, 4); })});
  suite.push_back({"slice_cols", check({{3, 5}}, [](Inputs x) { return slice_cols(x[0], 2, 5); })});
  suite.push_back({"gather_rows", check({{4, 3}}, [](Inputs x) {
                     const std::size_t idx[] = {2, 0, 2, 3};
                     return gather_rows(x[0], std::span<const std::size_t>(idx));
                   })});
  suite.push_back({"sigmoid", check({{3, 4}}, [](Inputs x) { return sigmoid(x[0]); }, 3.0)});
  suite.push_back({"tanh", check({{3, 4}}, [](Inputs x) { return tanh(x[0]); }, 2.0)});
  suite.push_back({"gelu", check({{3, 4}}, [](Inputs x) { return gelu(x[0]); }, 3.0)});
  suite.push_back({"dropout", check({{4, 5}}, [](Inputs x) {
                     std::mt19937_64 mask_rng(99);  // same mask on every evaluation
                     return dropout(x[0], 0.3, mask_rng, true);
                   })});
  suite.push_back({"instance_norm", check({{3, 6}}, [](Inputs x) { return instance_norm(x[0]); })});
  suite.push_back({"conv3d", check({{2, 3, 4, 2}, {3, 3, 3, 2, 3}, {3}},
                                   [](Inputs x) { return conv3d(x[0], x[1], x[2], 1); })});
  suite.push_back({"conv3d_dilated", check({{2, 5, 5, 2}, {3, 3, 3, 2, 2}, {2}},
                                           [](Inputs x) { return conv3d(x[0], x[1], x[2], 2); })});
  suite.push_back({"biaffine", check({{2, 3}, {5, 3}, {4, 3, 3}, {4, 6}, {4}}, [](Inputs x) {
                     return biaffine(x[0], x[1], x[2], x[3], x[4]);
                   })});
  suite.push_back({"softmax_cross_entropy", check({{4, 5}}, [](Inputs x) {
                     const std::uint16_t gold[] = {0, 4, 2, 1};
                     const std::uint8_t mask[] = {1, 1, 0, 1};
                     return softmax_cross_entropy(x[0], std::span<const std::uint16_t>(gold),
                                                  std::span<const std::uint8_t>(mask));
                   }, 2.0)});
  return suite;
}

}  // namespace bopn::ad
