#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "bopn/autodiff/tensor.hpp"

namespace bopn::ad {

// The closed kernel inventory. Shapes must match exactly; there is no
// implicit broadcasting. Every kernel throws ShapeError naming itself and
// the offending shapes.

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
/// Sum of all elements, as a scalar.
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b);

/// [m,k] x [k,n] -> [m,n]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x[n,in] W[in,out] + b[out] -> [n,out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Same data, new shape with equal element count.
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// Concatenation of 2-D tensors along columns / rows.
template <typename T> Tensor<T> concat_cols(std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> concat_rows(std::span<const Tensor<T>> parts);
/// Half-open row / column ranges of a 2-D tensor.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);
/// Rows of table[V,d] selected by index -> [n,d].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> indices);

template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
/// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T> Tensor<T> gelu(const Tensor<T>& x);

/// Inverted dropout. Identity when `training` is false or rate is 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng, bool training);

/// Standardises each row of a 2-D tensor (or a 1-D vector): (x - mean) /
/// sqrt(var + eps), no learned affine.
template <typename T> Tensor<T> instance_norm(const Tensor<T>& x, double eps = 1e-5);

/// Dilated 3-D cross-correlation with zero "same" padding.
/// input [D1,D2,D3,Cin], kernel [K,K,K,Cin,Cout], bias [Cout] -> [D1,D2,D3,Cout].
/// Throws ConfigError for even K or an unrepresentable dilation.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int dilation);

/// Bilinear-plus-linear scores for every (type, span) pair.
/// types [M,db], spans [P,db], bilinear [L,db,db], weight [L,2db], bias [L]
/// -> [M,P,L] with out[m,p,l] = t_m^T U_l s_p + W_l (t_m ; s_p) + b_l.
template <typename T>
Tensor<T> biaffine(const Tensor<T>& types, const Tensor<T>& spans, const Tensor<T>& bilinear,
                   const Tensor<T>& weight, const Tensor<T>& bias);

/// Mean over rows with mask != 0 of -log softmax(logits[r])[gold[r]].
/// logits [R,L]; gold and mask have R entries. Throws on an empty mask or a
/// gold index outside [0, L).
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint16_t> gold,
                                std::span<const std::uint8_t> mask);
/// Single-distribution form: logits [L], one gold class.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::size_t gold);

}  // namespace bopn::ad
