#include "bopn/autodiff/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numbers>

#include <fmt/format.h>

#include "bopn/types.hpp"
#include "make_result.hpp"

namespace bopn::ad {
namespace {

using detail::make_result;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(fmt::format("{}: incompatible shapes {} and {}", op, to_string(a),
                               to_string(b)));
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank)
    throw ShapeError(fmt::format("{}: expected rank {}, got shape {}", op, rank, to_string(s)));
}

template <typename T>
Tensor<T> unary(const char* op, const Tensor<T>& x, auto forward, auto derivative) {
  std::vector<T> out(x.size());
  auto in = x.values();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = forward(in[k]);
  return make_result<T>(op, x.shape(), std::move(out), {x}, [derivative](Node<T>& self) {
    auto& input = *self.inputs[0];
    if (!input.requires_grad) return;
    auto& g = input.grad_buffer();
    for (std::size_t k = 0; k < g.size(); ++k)
      g[k] += self.grad[k] * derivative(input.value[k], self.value[k]);
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a.values()[k] + b.values()[k];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& input : self.inputs) {
      if (!input->requires_grad) continue;
      auto& g = input->grad_buffer();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a.values()[k] * b.values()[k];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    if (lhs.requires_grad) {
      auto& g = lhs.grad_buffer();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k] * rhs.value[k];
    }
    if (rhs.requires_grad) {
      auto& g = rhs.grad_buffer();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k] * lhs.value[k];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (auto v : x.values()) total += v;
  return make_result<T>("sum", {}, {total}, {x}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("dot", a.shape(), b.shape());
  T total = 0;
  for (std::size_t k = 0; k < a.size(); ++k) total += a.values()[k] * b.values()[k];
  return make_result<T>("dot", {}, {total}, {a, b}, [](Node<T>& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    const T g0 = self.grad[0];
    if (lhs.requires_grad) {
      auto& g = lhs.grad_buffer();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += g0 * rhs.value[k];
    }
    if (rhs.requires_grad) {
      auto& g = rhs.grad_buffer();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += g0 * lhs.value[k];
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t q = 0; q < k; ++q) {
      const T x = av[r * k + q];
      const T* brow = bv.data() + q * n;
      T* orow = out.data() + r * n;
      for (std::size_t c = 0; c < n; ++c) orow[c] += x * brow[c];
    }
  return make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    const T* g = self.grad.data();
    if (lhs.requires_grad) {
      auto& ga = lhs.grad_buffer();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t q = 0; q < k; ++q) {
          T acc = 0;
          const T* brow = rhs.value.data() + q * n;
          for (std::size_t c = 0; c < n; ++c) acc += g[r * n + c] * brow[c];
          ga[r * k + q] += acc;
        }
    }
    if (rhs.requires_grad) {
      auto& gb = rhs.grad_buffer();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t q = 0; q < k; ++q) {
          const T x = lhs.value[r * k + q];
          T* gbrow = gb.data() + q * n;
          for (std::size_t c = 0; c < n; ++c) gbrow[c] += x * g[r * n + c];
        }
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0))
    shape_error("linear", x.shape(), weight.shape());
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = weight.dim(1);
  if (bias.rank() != 1 || bias.dim(0) != out_dim)
    shape_error("linear", weight.shape(), bias.shape());
  std::vector<T> out(n * out_dim);
  auto xv = x.values();
  auto wv = weight.values();
  auto bv = bias.values();
  for (std::size_t r = 0; r < n; ++r) {
    T* orow = out.data() + r * out_dim;
    std::copy(bv.begin(), bv.end(), orow);
    for (std::size_t q = 0; q < in; ++q) {
      const T a = xv[r * in + q];
      const T* wrow = wv.data() + q * out_dim;
      for (std::size_t c = 0; c < out_dim; ++c) orow[c] += a * wrow[c];
    }
  }
  return make_result<T>(
      "linear", {n, out_dim}, std::move(out), {x, weight, bias}, [n, in, out_dim](Node<T>& self) {
        auto& xi = *self.inputs[0];
        auto& wi = *self.inputs[1];
        auto& bi = *self.inputs[2];
        const T* g = self.grad.data();
        if (xi.requires_grad) {
          auto& gx = xi.grad_buffer();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t q = 0; q < in; ++q) {
              T acc = 0;
              const T* wrow = wi.value.data() + q * out_dim;
              for (std::size_t c = 0; c < out_dim; ++c) acc += g[r * out_dim + c] * wrow[c];
              gx[r * in + q] += acc;
            }
        }
        if (wi.requires_grad) {
          auto& gw = wi.grad_buffer();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t q = 0; q < in; ++q) {
              const T a = xi.value[r * in + q];
              T* gwrow = gw.data() + q * out_dim;
              for (std::size_t c = 0; c < out_dim; ++c) gwrow[c] += a * g[r * out_dim + c];
            }
        }
        if (bi.requires_grad) {
          auto& gb = bi.grad_buffer();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < out_dim; ++c) gb[c] += g[r * out_dim + c];
        }
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (element_count(shape) != x.size()) shape_error("reshape", x.shape(), shape);
  std::vector<T> out(x.values().begin(), x.values().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k];
  });
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) shape_error("concat_cols", parts[0].shape(), p.shape());
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(rows * total);
  std::size_t col = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[p], widths[p], out.data() + r * total + col);
    col += widths[p];
  }
  return make_result<T>("concat_cols", {rows, total}, std::move(out), parts,
                        [rows, total, widths](Node<T>& self) {
                          std::size_t col = 0;
                          for (std::size_t p = 0; p < widths.size(); ++p) {
                            auto& input = *self.inputs[p];
                            if (input.requires_grad) {
                              auto& g = input.grad_buffer();
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t c = 0; c < widths[p]; ++c)
                                  g[r * widths[p] + c] += self.grad[r * total + col + c];
                            }
                            col += widths[p];
                          }
                        });
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
  std::size_t rows = 0;
  std::vector<T> out;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != cols) shape_error("concat_rows", parts[0].shape(), p.shape());
    rows += p.dim(0);
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return make_result<T>("concat_rows", {rows, cols}, std::move(out), parts, [](Node<T>& self) {
    std::size_t at = 0;
    for (auto& input : self.inputs) {
      const auto n = input->value.size();
      if (input->requires_grad) {
        auto& g = input->grad_buffer();
        for (std::size_t k = 0; k < n; ++k) g[k] += self.grad[at + k];
      }
      at += n;
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 2 || begin > end || end > x.dim(0))
    throw ShapeError(fmt::format("slice_rows: rows [{}, {}) of shape {}", begin, end,
                                 to_string(x.shape())));
  const std::size_t cols = x.dim(1);
  std::vector<T> out(x.values().begin() + begin * cols, x.values().begin() + end * cols);
  return make_result<T>("slice_rows", {end - begin, cols}, std::move(out), {x},
                        [begin, cols](Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::size_t k = 0; k < self.grad.size(); ++k)
                            g[begin * cols + k] += self.grad[k];
                        });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 2 || begin > end || end > x.dim(1))
    throw ShapeError(fmt::format("slice_cols: columns [{}, {}) of shape {}", begin, end,
                                 to_string(x.shape())));
  const std::size_t rows = x.dim(0), cols = x.dim(1), width = end - begin;
  std::vector<T> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.values().data() + r * cols + begin, width, out.data() + r * width);
  return make_result<T>("slice_cols", {rows, width}, std::move(out), {x},
                        [rows, cols, begin, width](Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t c = 0; c < width; ++c)
                              g[r * cols + begin + c] += self.grad[r * width + c];
                        });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> indices) {
  require_rank("gather_rows", table.shape(), 2);
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  std::vector<T> out(indices.size() * width);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= vocab)
      throw ShapeError(fmt::format("gather_rows: index {} outside table of shape {}",
                                   indices[r], to_string(table.shape())));
    std::copy_n(table.values().data() + indices[r] * width, width, out.data() + r * width);
  }
  std::vector<std::size_t> saved(indices.begin(), indices.end());
  return make_result<T>("gather_rows", {indices.size(), width}, std::move(out), {table},
                        [saved = std::move(saved), width](Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::size_t r = 0; r < saved.size(); ++r)
                            for (std::size_t c = 0; c < width; ++c)
                              g[saved[r] * width + c] += self.grad[r * width + c];
                        });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = static_cast<T>(0.044715);
  return unary<T>(
      "gelu", x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v))); },
      [](T v, T) {
        const T t = std::tanh(c * (v + a * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0)
    throw ShapeError(fmt::format("dropout: rate {} outside [0, 1)", rate));
  if (!training || rate == 0.0) return x;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<T> mask(x.size());
  std::vector<T> out(x.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    mask[k] = uniform(rng) < rate ? T(0) : scale;
    out[k] = x.values()[k] * mask[k];
  }
  return make_result<T>("dropout", x.shape(), std::move(out), {x},
                        [mask = std::move(mask)](Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k] * mask[k];
                        });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, double eps) {
  if (x.rank() != 1 && x.rank() != 2)
    throw ShapeError(fmt::format("instance_norm: expected rank 1 or 2, got shape {}",
                                 to_string(x.shape())));
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / std::max<std::size_t>(cols, 1);
  std::vector<T> out(x.size());
  std::vector<T> inv_std(rows);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * cols;
    T mean = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += row[c];
    mean /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<T>(cols);
    inv_std[r] = T(1) / std::sqrt(var + static_cast<T>(eps));
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = (row[c] - mean) * inv_std[r];
  }
  return make_result<T>("instance_norm", x.shape(), std::move(out), {x},
                        [rows, cols, inv_std = std::move(inv_std)](Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* dy = self.grad.data() + r * cols;
                            const T* y = self.value.data() + r * cols;
                            T mean_dy = 0, mean_dy_y = 0;
                            for (std::size_t c = 0; c < cols; ++c) {
                              mean_dy += dy[c];
                              mean_dy_y += dy[c] * y[c];
                            }
                            mean_dy /= static_cast<T>(cols);
                            mean_dy_y /= static_cast<T>(cols);
                            for (std::size_t c = 0; c < cols; ++c)
                              g[r * cols + c] += inv_std[r] * (dy[c] - mean_dy - y[c] * mean_dy_y);
                          }
                        });
}

template <typename T>
Tensor<T> biaffine(const Tensor<T>& types, const Tensor<T>& spans, const Tensor<T>& bilinear,
                   const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank("biaffine", types.shape(), 2);
  require_rank("biaffine", spans.shape(), 2);
  require_rank("biaffine", bilinear.shape(), 3);
  require_rank("biaffine", weight.shape(), 2);
  require_rank("biaffine", bias.shape(), 1);
  const std::size_t m = types.dim(0), db = types.dim(1), p = spans.dim(0), l = bias.dim(0);
  if (spans.dim(1) != db) shape_error("biaffine", types.shape(), spans.shape());
  if (bilinear.shape() != Shape{l, db, db}) shape_error("biaffine", bilinear.shape(), bias.shape());
  if (weight.shape() != Shape{l, 2 * db}) shape_error("biaffine", weight.shape(), bias.shape());

  auto tv = types.values();
  auto sv = spans.values();
  auto uv = bilinear.values();
  auto wv = weight.values();
  // left[m,l,b] = sum_a t[m,a] U[l,a,b]
  std::vector<T> left(m * l * db, T(0));
  for (std::size_t mi = 0; mi < m; ++mi)
    for (std::size_t li = 0; li < l; ++li) {
      T* dst = left.data() + (mi * l + li) * db;
      for (std::size_t a = 0; a < db; ++a) {
        const T t = tv[mi * db + a];
        const T* urow = uv.data() + (li * db + a) * db;
        for (std::size_t b = 0; b < db; ++b) dst[b] += t * urow[b];
      }
    }
  // type_part[m,l] = W_l[:db] . t_m + b_l ; span_part[p,l] = W_l[db:] . s_p
  std::vector<T> type_part(m * l), span_part(p * l);
  for (std::size_t li = 0; li < l; ++li) {
    const T* w = wv.data() + li * 2 * db;
    for (std::size_t mi = 0; mi < m; ++mi) {
      T acc = bias.values()[li];
      for (std::size_t a = 0; a < db; ++a) acc += w[a] * tv[mi * db + a];
      type_part[mi * l + li] = acc;
    }
    for (std::size_t pi = 0; pi < p; ++pi) {
      T acc = 0;
      for (std::size_t b = 0; b < db; ++b) acc += w[db + b] * sv[pi * db + b];
      span_part[pi * l + li] = acc;
    }
  }
  std::vector<T> out(m * p * l);
  for (std::size_t mi = 0; mi < m; ++mi)
    for (std::size_t pi = 0; pi < p; ++pi) {
      const T* s = sv.data() + pi * db;
      for (std::size_t li = 0; li < l; ++li) {
        const T* lt = left.data() + (mi * l + li) * db;
        T acc = type_part[mi * l + li] + span_part[pi * l + li];
        for (std::size_t b = 0; b < db; ++b) acc += lt[b] * s[b];
        out[(mi * p + pi) * l + li] = acc;
      }
    }

  return make_result<T>(
      "biaffine", {m, p, l}, std::move(out), {types, spans, bilinear, weight, bias},
      [m, p, l, db, left = std::move(left)](Node<T>& self) {
        auto& tn = *self.inputs[0];
        auto& sn = *self.inputs[1];
        auto& un = *self.inputs[2];
        auto& wn = *self.inputs[3];
        auto& bn = *self.inputs[4];
        const T* g = self.grad.data();
        // d_left[m,l,b] = sum_p g[m,p,l] s[p,b]
        std::vector<T> d_left(m * l * db, T(0));
        for (std::size_t mi = 0; mi < m; ++mi)
          for (std::size_t pi = 0; pi < p; ++pi) {
            const T* s = sn.value.data() + pi * db;
            for (std::size_t li = 0; li < l; ++li) {
              const T gv = g[(mi * p + pi) * l + li];
              T* dl = d_left.data() + (mi * l + li) * db;
              for (std::size_t b = 0; b < db; ++b) dl[b] += gv * s[b];
            }
          }
        if (sn.requires_grad) {
          auto& gs = sn.grad_buffer();
          for (std::size_t mi = 0; mi < m; ++mi)
            for (std::size_t pi = 0; pi < p; ++pi)
              for (std::size_t li = 0; li < l; ++li) {
                const T gv = g[(mi * p + pi) * l + li];
                const T* lt = left.data() + (mi * l + li) * db;
                const T* w = wn.value.data() + li * 2 * db + db;
                T* dst = gs.data() + pi * db;
                for (std::size_t b = 0; b < db; ++b) dst[b] += gv * (lt[b] + w[b]);
              }
        }
        if (tn.requires_grad) {
          auto& gt = tn.grad_buffer();
          for (std::size_t mi = 0; mi < m; ++mi)
            for (std::size_t li = 0; li < l; ++li) {
              const T* dl = d_left.data() + (mi * l + li) * db;
              T gsum = 0;
              for (std::size_t pi = 0; pi < p; ++pi) gsum += g[(mi * p + pi) * l + li];
              const T* w = wn.value.data() + li * 2 * db;
              for (std::size_t a = 0; a < db; ++a) {
                const T* urow = un.value.data() + (li * db + a) * db;
                T acc = gsum * w[a];
                for (std::size_t b = 0; b < db; ++b) acc += dl[b] * urow[b];
                gt[mi * db + a] += acc;
              }
            }
        }
        if (un.requires_grad) {
          auto& gu = un.grad_buffer();
          for (std::size_t mi = 0; mi < m; ++mi)
            for (std::size_t li = 0; li < l; ++li) {
              const T* dl = d_left.data() + (mi * l + li) * db;
              for (std::size_t a = 0; a < db; ++a) {
                const T t = tn.value[mi * db + a];
                T* urow = gu.data() + (li * db + a) * db;
                for (std::size_t b = 0; b < db; ++b) urow[b] += t * dl[b];
              }
            }
        }
        if (wn.requires_grad || bn.requires_grad) {
          // Row sums of g over spans (per type) and over types (per span).
          std::vector<T> by_type(m * l, T(0)), by_span(p * l, T(0));
          for (std::size_t mi = 0; mi < m; ++mi)
            for (std::size_t pi = 0; pi < p; ++pi)
              for (std::size_t li = 0; li < l; ++li) {
                const T gv = g[(mi * p + pi) * l + li];
                by_type[mi * l + li] += gv;
                by_span[pi * l + li] += gv;
              }
          if (wn.requires_grad) {
            auto& gw = wn.grad_buffer();
            for (std::size_t li = 0; li < l; ++li) {
              T* w = gw.data() + li * 2 * db;
              for (std::size_t mi = 0; mi < m; ++mi)
                for (std::size_t a = 0; a < db; ++a)
                  w[a] += by_type[mi * l + li] * tn.value[mi * db + a];
              for (std::size_t pi = 0; pi < p; ++pi)
                for (std::size_t b = 0; b < db; ++b)
                  w[db + b] += by_span[pi * l + li] * sn.value[pi * db + b];
            }
          }
          if (bn.requires_grad) {
            auto& gb = bn.grad_buffer();
            for (std::size_t mi = 0; mi < m; ++mi)
              for (std::size_t li = 0; li < l; ++li) gb[li] += by_type[mi * l + li];
          }
        }
      });
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint16_t> gold,
                                std::span<const std::uint8_t> mask) {
  require_rank("softmax_cross_entropy", logits.shape(), 2);
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (gold.size() != rows || mask.size() != rows)
    throw ShapeError(fmt::format(
        "softmax_cross_entropy: logits {} with {} gold labels and {} mask entries",
        to_string(logits.shape()), gold.size(), mask.size()));
  if (classes < 1) throw ShapeError("softmax_cross_entropy: no classes");
  std::size_t active = 0;
  for (std::size_t r = 0; r < rows; ++r)
    if (mask[r]) {
      if (gold[r] >= classes)
        throw ShapeError(fmt::format("softmax_cross_entropy: gold {} outside [0, {})", gold[r],
                                     classes));
      ++active;
    }
  if (active == 0) throw ShapeError("softmax_cross_entropy: mask selects no rows");

  // Softmax probabilities of active rows are kept for the backward pass.
  std::vector<T> probs(rows * classes, T(0));
  T total = 0;
  auto lv = logits.values();
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    const T* row = lv.data() + r * classes;
    const T top = *std::max_element(row, row + classes);
    T z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - top);
    const T log_z = std::log(z) + top;
    total += log_z - row[gold[r]];
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(row[c] - log_z);
  }
  const T inv = T(1) / static_cast<T>(active);
  std::vector<std::uint16_t> gold_copy(gold.begin(), gold.end());
  std::vector<std::uint8_t> mask_copy(mask.begin(), mask.end());
  return make_result<T>("softmax_cross_entropy", {}, {total * inv}, {logits},
                        [rows, classes, inv, probs = std::move(probs),
                         gold_copy = std::move(gold_copy),
                         mask_copy = std::move(mask_copy)](Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          const T scale = self.grad[0] * inv;
                          for (std::size_t r = 0; r < rows; ++r) {
                            if (!mask_copy[r]) continue;
                            for (std::size_t c = 0; c < classes; ++c)
                              g[r * classes + c] += scale * probs[r * classes + c];
                            g[r * classes + gold_copy[r]] -= scale;
                          }
                        });
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::size_t gold) {
  require_rank("softmax_cross_entropy", logits.shape(), 1);
  if (gold >= logits.dim(0))
    throw ShapeError(fmt::format("softmax_cross_entropy: gold {} outside [0, {})", gold,
                                 logits.dim(0)));
  const std::uint16_t label = static_cast<std::uint16_t>(gold);
  const std::uint8_t on = 1;
  return softmax_cross_entropy(reshape(logits, {1, logits.dim(0)}), std::span(&label, 1),
                               std::span(&on, 1));
}

#define BOPN_INSTANTIATE_KERNELS(T)                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> dot(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                                \
  template Tensor<T> concat_rows(std::span<const Tensor<T>>);                                \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                 \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                 \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);            \
  template Tensor<T> sigmoid(const Tensor<T>&);                                              \
  template Tensor<T> tanh(const Tensor<T>&);                                                 \
  template Tensor<T> gelu(const Tensor<T>&);                                                 \
  template Tensor<T> dropout(const Tensor<T>&, double, std::mt19937_64&, bool);              \
  template Tensor<T> instance_norm(const Tensor<T>&, double);                                \
  template Tensor<T> biaffine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                              const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const std::uint16_t>, \
                                           std::span<const std::uint8_t>);                   \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::size_t);

BOPN_INSTANTIATE_KERNELS(float)
BOPN_INSTANTIATE_KERNELS(double)

#undef BOPN_INSTANTIATE_KERNELS

}  // namespace bopn::ad
