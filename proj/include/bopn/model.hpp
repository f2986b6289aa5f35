#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bopn/autodiff/grad_check.hpp"
#include "bopn/autodiff/tensor.hpp"
#include "bopn/types.hpp"

namespace bopn {

template <typename T>
struct NamedParameter {
  std::string name;
  ad::Tensor<T> tensor;
};

/// Ordered collection of trainable tensors. Order is creation order and is
/// part of the checkpoint layout.
template <typename T>
class ParameterSet {
 public:
  ad::Tensor<T> add(std::string name, ad::Shape shape);
  /// Throws ValidationError for an unknown name.
  const ad::Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::span<const NamedParameter<T>> entries() const { return entries_; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<NamedParameter<T>> entries_;
};

/// One sentence as the network sees it. `token_ids` may be padded beyond
/// `length`; padded positions are ignored. When `features` is non-empty it
/// replaces the token embedding lookup with `length` rows of width
/// `feature_dim`.
struct SentenceInput {
  std::vector<std::size_t> token_ids;
  std::size_t length = 0;
  std::vector<float> features;
  std::size_t feature_dim = 0;

  std::size_t padded_length() const { return std::max(token_ids.size(), length); }
};

/// Per-call forward state: dropout on/off and its random stream.
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

template <typename T>
struct EncodedSequence {
  ad::Tensor<T> types;   // [M, d]
  ad::Tensor<T> tokens;  // [N_padded, d], rows past the true length are zero
};

template <typename T>
class BoundaryOffsetModel {
 public:
  /// Randomly initialised from `config.seed`.
  BoundaryOffsetModel(ModelConfig config, std::size_t vocab_size, std::size_t type_count);

  const ModelConfig& config() const { return config_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t type_count() const { return type_count_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

  /// BiLSTM over type tokens followed by the sentence.
  EncodedSequence<T> encode_sequence(const SentenceInput& input, ForwardContext ctx) const;

  /// Conditional layer norm of (i, j) plus the region embedding, one row per
  /// requested cell -> [cells, span_size]. Throws ValidationError for an
  /// index outside the token rows.
  ad::Tensor<T> span_representation(const ad::Tensor<T>& tokens,
                                     std::span<const std::pair<std::size_t, std::size_t>> cells) const;
  /// All N x N cells in row-major (start, end) order.
  ad::Tensor<T> span_representation(const ad::Tensor<T>& tokens) const;

  /// FFN projections followed by the biaffine classifier -> [M, cells, L].
  ad::Tensor<T> biaffine_score(const ad::Tensor<T>& types, const ad::Tensor<T>& spans,
                               ForwardContext ctx) const;

  /// Multi-dilation convolution over scores [M, N, N, L] -> [M, N, N, L].
  /// Cells outside the first `length` rows and columns are zeroed first.
  /// Identity when the stack is disabled.
  ad::Tensor<T> conv_stack(const ad::Tensor<T>& scores, std::size_t length) const;

  /// Logits [M, N_padded, N_padded, L].
  ad::Tensor<T> forward(const SentenceInput& input, ForwardContext ctx) const;

 private:
  ad::Tensor<T> run_lstm(const ad::Tensor<T>& sequence, const std::string& direction,
                         bool reverse) const;

  ModelConfig config_;
  std::size_t vocab_size_;
  std::size_t type_count_;
  ParameterSet<T> params_;
};

/// Argmax label of every cell inside the true length.
template <typename T>
OffsetGrid predict_grid(const ad::Tensor<T>& logits, std::size_t length, int max_offset);

/// Mean cross-entropy over the valid cells of one sentence.
/// logits [M,N,N,L], gold grid of the same padded size, mask of M*N*N cells.
template <typename T>
ad::Tensor<T> grid_loss(const ad::Tensor<T>& logits, const OffsetGrid& gold,
                        std::span<const std::uint8_t> mask);

/// 1 for every cell with start and end below `length`, 0 elsewhere.
std::vector<std::uint8_t> cell_mask(std::size_t types, std::size_t padded_length,
                                    std::size_t length);

/// Finite-difference check of the full model loss on a fixed 4-token,
/// two-type sentence in double precision. The model and the sampled
/// parameter elements are drawn from `seed`. `full` enables type inputs and
/// the convolution stack.
ad::GradCheckResult model_grad_check(std::uint64_t seed, double sample_fraction, bool full = true);

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;
extern template class BoundaryOffsetModel<float>;
extern template class BoundaryOffsetModel<double>;

}  // namespace bopn
