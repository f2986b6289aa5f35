#include <climits>
#include <memory>

#include <fmt/format.h>

#include "bopn/autodiff/kernels.hpp"
#include "bopn/types.hpp"
#include "make_result.hpp"

namespace bopn::ad {
namespace {

// Flattened list of in-bounds (output cell, input cell, kernel tap) triples,
// shared by the forward and backward passes.
struct ConvPlan {
  std::vector<std::size_t> out_cell;
  std::vector<std::size_t> in_cell;
  std::vector<std::size_t> tap;
};

ConvPlan plan_conv(std::size_t d1, std::size_t d2, std::size_t d3, int kernel, int dilation) {
  ConvPlan plan;
  const int half = kernel / 2;
  const long dims[3] = {static_cast<long>(d1), static_cast<long>(d2), static_cast<long>(d3)};
  for (long x = 0; x < dims[0]; ++x)
    for (long y = 0; y < dims[1]; ++y)
      for (long z = 0; z < dims[2]; ++z) {
        const auto out = static_cast<std::size_t>((x * dims[1] + y) * dims[2] + z);
        for (int a = 0; a < kernel; ++a) {
          const long sx = x + static_cast<long>(a - half) * dilation;
          if (sx < 0 || sx >= dims[0]) continue;
          for (int b = 0; b < kernel; ++b) {
            const long sy = y + static_cast<long>(b - half) * dilation;
            if (sy < 0 || sy >= dims[1]) continue;
            for (int c = 0; c < kernel; ++c) {
              const long sz = z + static_cast<long>(c - half) * dilation;
              if (sz < 0 || sz >= dims[2]) continue;
              plan.out_cell.push_back(out);
              plan.in_cell.push_back(static_cast<std::size_t>((sx * dims[1] + sy) * dims[2] + sz));
              plan.tap.push_back(static_cast<std::size_t>((a * kernel + b) * kernel + c));
            }
          }
        }
      }
  return plan;
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int dilation) {
  if (input.rank() != 4 || kernel.rank() != 5 || bias.rank() != 1)
    throw ShapeError(fmt::format("conv3d: input {}, kernel {}, bias {}", to_string(input.shape()),
                                 to_string(kernel.shape()), to_string(bias.shape())));
  const std::size_t k = kernel.dim(0);
  if (kernel.dim(1) != k || kernel.dim(2) != k)
    throw ShapeError(fmt::format("conv3d: kernel {} is not cubic", to_string(kernel.shape())));
  if (k % 2 == 0) throw ConfigError(fmt::format("conv3d: kernel size {} must be odd", k));
  if (dilation < 1) throw ConfigError(fmt::format("conv3d: dilation {} must be >= 1", dilation));
  if (static_cast<long long>(k / 2) * dilation > INT_MAX / 2)
    throw ConfigError(fmt::format("conv3d: dilation {} with kernel {} overflows the window",
                                  dilation, k));
  const std::size_t c_in = input.dim(3), c_out = kernel.dim(4);
  if (kernel.dim(3) != c_in || bias.dim(0) != c_out)
    throw ShapeError(fmt::format("conv3d: input {}, kernel {}, bias {}", to_string(input.shape()),
                                 to_string(kernel.shape()), to_string(bias.shape())));

  const std::size_t d1 = input.dim(0), d2 = input.dim(1), d3 = input.dim(2);
  auto plan = std::make_shared<ConvPlan>(
      plan_conv(d1, d2, d3, static_cast<int>(k), dilation));
  const std::size_t cells = d1 * d2 * d3;
  const std::size_t tap_size = c_in * c_out;

  std::vector<T> out(cells * c_out);
  auto bv = bias.values();
  for (std::size_t cell = 0; cell < cells; ++cell)
    std::copy(bv.begin(), bv.end(), out.begin() + cell * c_out);
  auto xv = input.values();
  auto kv = kernel.values();
  for (std::size_t e = 0; e < plan->out_cell.size(); ++e) {
    const T* x = xv.data() + plan->in_cell[e] * c_in;
    const T* w = kv.data() + plan->tap[e] * tap_size;
    T* o = out.data() + plan->out_cell[e] * c_out;
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      const T xval = x[ci];
      const T* wrow = w + ci * c_out;
      for (std::size_t co = 0; co < c_out; ++co) o[co] += xval * wrow[co];
    }
  }

  return detail::make_result<T>(
      "conv3d", {d1, d2, d3, c_out}, std::move(out), {input, kernel, bias},
      [plan, cells, c_in, c_out, tap_size](Node<T>& self) {
        auto& xn = *self.inputs[0];
        auto& kn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        const T* g = self.grad.data();
        if (xn.requires_grad) {
          auto& gx = xn.grad_buffer();
          for (std::size_t e = 0; e < plan->out_cell.size(); ++e) {
            const T* go = g + plan->out_cell[e] * c_out;
            const T* w = kn.value.data() + plan->tap[e] * tap_size;
            T* dx = gx.data() + plan->in_cell[e] * c_in;
            for (std::size_t ci = 0; ci < c_in; ++ci) {
              const T* wrow = w + ci * c_out;
              T acc = 0;
              for (std::size_t co = 0; co < c_out; ++co) acc += go[co] * wrow[co];
              dx[ci] += acc;
            }
          }
        }
        if (kn.requires_grad) {
          auto& gk = kn.grad_buffer();
          for (std::size_t e = 0; e < plan->out_cell.size(); ++e) {
            const T* go = g + plan->out_cell[e] * c_out;
            const T* x = xn.value.data() + plan->in_cell[e] * c_in;
            T* dw = gk.data() + plan->tap[e] * tap_size;
            for (std::size_t ci = 0; ci < c_in; ++ci) {
              const T xval = x[ci];
              T* dwrow = dw + ci * c_out;
              for (std::size_t co = 0; co < c_out; ++co) dwrow[co] += xval * go[co];
            }
          }
        }
        if (bn.requires_grad) {
          auto& gb = bn.grad_buffer();
          for (std::size_t cell = 0; cell < cells; ++cell)
            for (std::size_t co = 0; co < c_out; ++co) gb[co] += g[cell * c_out + co];
        }
      });
}

template Tensor<float> conv3d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                              int);
template Tensor<double> conv3d(const Tensor<double>&, const Tensor<double>&,
                               const Tensor<double>&, int);

}  // namespace bopn::ad
