#include "bopn/model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "bopn/autodiff/kernels.hpp"
#include "bopn/offset_codec.hpp"

namespace bopn {

using ad::Shape;
using ad::Tensor;

template <typename T>
Tensor<T> ParameterSet<T>::add(std::string name, Shape shape) {
  if (contains(name)) throw ValidationError("duplicate parameter '" + name + "'");
  auto tensor = Tensor<T>::zeros(std::move(shape), true);
  entries_.push_back({std::move(name), tensor});
  return tensor;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw ValidationError("unknown parameter '" + name + "'");
}

template <typename T>
bool ParameterSet<T>::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.name == name; });
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += e.tensor.size();
  return total;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

namespace {

std::string conv_name(std::size_t k, const char* part) {
  return fmt::format("conv.{}.{}", k, part);
}

void require_rng(ForwardContext ctx) {
  if (ctx.training && ctx.rng == nullptr)
    throw ValidationError("training forward pass needs a random stream");
}

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, double rate, ForwardContext ctx) {
  if (!ctx.training || rate <= 0.0) return x;
  return ad::dropout(x, rate, *ctx.rng, true);
}

}  // namespace

template <typename T>
BoundaryOffsetModel<T>::BoundaryOffsetModel(ModelConfig config, std::size_t vocab_size,
                                             std::size_t type_count)
    : config_(std::move(config)), vocab_size_(vocab_size), type_count_(type_count) {
  config_.validate();
  if (vocab_size_ < 2) throw ConfigError("vocabulary must hold at least the reserved tokens");
  if (type_count_ == 0) throw ConfigError("at least one entity type is required");

  std::mt19937_64 rng(config_.seed);
  auto uniform = [&](std::string name, Shape shape, std::size_t fan_in) {
    auto t = params_.add(std::move(name), std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.mutable_values()) v = static_cast<T>(dist(rng));
  };
  auto normal = [&](std::string name, Shape shape) {
    auto t = params_.add(std::move(name), std::move(shape));
    std::normal_distribution<double> dist(0.0, 0.02);
    for (auto& v : t.mutable_values()) v = static_cast<T>(dist(rng));
  };
  auto constant = [&](std::string name, Shape shape, T value) {
    auto t = params_.add(std::move(name), std::move(shape));
    std::fill(t.mutable_values().begin(), t.mutable_values().end(), value);
  };

  const auto emb = static_cast<std::size_t>(config_.embedding_dim);
  const auto d = static_cast<std::size_t>(config_.hidden_size);
  const std::size_t h = d / 2;
  const auto db = static_cast<std::size_t>(config_.biaffine_size);
  const std::size_t labels = config_.label_count();
  const std::size_t span = config_.span_size();

  normal("token_embeddings", {vocab_size_, emb});
  if (config_.use_type_inputs)
    normal("type_tokens", {type_count_, emb});
  else
    normal("type_embeddings", {type_count_, d});
  for (const char* dir : {"forward", "backward"}) {
    uniform(fmt::format("lstm.{}.input_weight", dir), {emb, 4 * h}, emb);
    uniform(fmt::format("lstm.{}.hidden_weight", dir), {h, 4 * h}, h);
    constant(fmt::format("lstm.{}.bias", dir), {4 * h}, T(0));
  }
  uniform("cln.gamma.weight", {d, d}, d);
  constant("cln.gamma.bias", {d}, T(1));
  uniform("cln.lambda.weight", {d, d}, d);
  constant("cln.lambda.bias", {d}, T(0));
  if (config_.use_region_embedding)
    normal("region_embeddings", {2, static_cast<std::size_t>(config_.region_embedding_size)});
  uniform("biaffine.type_proj.weight", {d, db}, d);
  constant("biaffine.type_proj.bias", {db}, T(0));
  uniform("biaffine.span_proj.weight", {span, db}, span);
  constant("biaffine.span_proj.bias", {db}, T(0));
  uniform("biaffine.bilinear", {labels, db, db}, db);
  uniform("biaffine.linear", {labels, 2 * db}, 2 * db);
  constant("biaffine.bias", {labels}, T(0));
  if (config_.use_conv_stack) {
    const auto k = static_cast<std::size_t>(config_.conv_kernel);
    const std::size_t width = config_.conv_width();
    for (std::size_t c = 0; c < config_.conv_dilations.size(); ++c) {
      uniform(conv_name(c, "kernel"), {k, k, k, labels, width}, k * k * k * labels);
      constant(conv_name(c, "bias"), {width}, T(0));
    }
    const std::size_t concat = width * config_.conv_dilations.size();
    uniform("conv.output.weight", {concat, labels}, concat);
    constant("conv.output.bias", {labels}, T(0));
  }
}

template <typename T>
Tensor<T> BoundaryOffsetModel<T>::run_lstm(const Tensor<T>& sequence, const std::string& direction,
                                           bool reverse) const {
  const auto& wx = params_.get("lstm." + direction + ".input_weight");
  const auto& wh = params_.get("lstm." + direction + ".hidden_weight");
  const auto& b = params_.get("lstm." + direction + ".bias");
  const std::size_t h = wh.dim(0);
  const std::size_t steps = sequence.dim(0);

  const auto pre = ad::linear(sequence, wx, b);
  std::vector<Tensor<T>> outputs(steps);
  Tensor<T> hidden, cell;
  for (std::size_t n = 0; n < steps; ++n) {
    const std::size_t t = reverse ? steps - 1 - n : n;
    auto gates = ad::slice_rows(pre, t, t + 1);
    if (hidden.defined()) gates = ad::add(gates, ad::matmul(hidden, wh));
    const auto in = ad::sigmoid(ad::slice_cols(gates, 0, h));
    const auto forget = ad::sigmoid(ad::slice_cols(gates, h, 2 * h));
    const auto candidate = ad::tanh(ad::slice_cols(gates, 2 * h, 3 * h));
    const auto out = ad::sigmoid(ad::slice_cols(gates, 3 * h, 4 * h));
    const auto written = ad::mul(in, candidate);
    cell = cell.defined() ? ad::add(ad::mul(forget, cell), written) : written;
    hidden = ad::mul(out, ad::tanh(cell));
    outputs[t] = hidden;
  }
  return ad::concat_rows<T>(outputs);
}

template <typename T>
EncodedSequence<T> BoundaryOffsetModel<T>::encode_sequence(const SentenceInput& input,
                                                           ForwardContext ctx) const {
  require_rng(ctx);
  const std::size_t n = input.length;
  const std::size_t padded = input.padded_length();
  if (n == 0) throw ValidationError("empty sentence");
  if (n > padded) throw ValidationError("sentence length exceeds its padded size");

  Tensor<T> words;
  if (!input.features.empty()) {
    if (input.feature_dim != static_cast<std::size_t>(config_.embedding_dim))
      throw ValidationError(fmt::format("embedding width {} does not match the configured {}",
                                        input.feature_dim, config_.embedding_dim));
    if (input.features.size() < n * input.feature_dim)
      throw ValidationError("precomputed embeddings cover fewer rows than the sentence");
    std::vector<T> rows(input.features.begin(),
                        input.features.begin() + static_cast<std::ptrdiff_t>(n * input.feature_dim));
    words = Tensor<T>::from({n, input.feature_dim}, std::move(rows));
  } else {
    for (std::size_t t = 0; t < n; ++t)
      if (input.token_ids[t] >= vocab_size_)
        throw ValidationError(fmt::format("token id {} outside the vocabulary", input.token_ids[t]));
    words = ad::gather_rows(params_.get("token_embeddings"),
                            std::span<const std::size_t>(input.token_ids.data(), n));
  }

  const std::size_t m = type_count_;
  Tensor<T> sequence = words;
  if (config_.use_type_inputs) {
    const std::vector<Tensor<T>> parts = {params_.get("type_tokens"), words};
    sequence = ad::concat_rows<T>(parts);
  }
  const std::vector<Tensor<T>> directions = {run_lstm(sequence, "forward", false),
                                             run_lstm(sequence, "backward", true)};
  const auto hidden = maybe_dropout(ad::concat_cols<T>(directions), config_.lstm_dropout, ctx);

  EncodedSequence<T> out;
  if (config_.use_type_inputs) {
    out.types = ad::slice_rows(hidden, 0, m);
    out.tokens = ad::slice_rows(hidden, m, m + n);
  } else {
    out.types = params_.get("type_embeddings");
    out.tokens = hidden;
  }
  if (padded > n) {
    const std::vector<Tensor<T>> parts = {
        out.tokens, Tensor<T>::zeros({padded - n, static_cast<std::size_t>(config_.hidden_size)})};
    out.tokens = ad::concat_rows<T>(parts);
  }
  return out;
}

template <typename T>
Tensor<T> BoundaryOffsetModel<T>::span_representation(
    const Tensor<T>& tokens, std::span<const std::pair<std::size_t, std::size_t>> cells) const {
  const std::size_t n = tokens.dim(0);
  std::vector<std::size_t> starts, ends, regions;
  starts.reserve(cells.size());
  ends.reserve(cells.size());
  regions.reserve(cells.size());
  for (const auto& [i, j] : cells) {
    if (i >= n || j >= n)
      throw ValidationError(fmt::format("span ({}, {}) outside a sentence of {} tokens", i, j, n));
    starts.push_back(i);
    ends.push_back(j);
    regions.push_back(i <= j ? 0 : 1);
  }
  const auto normed = ad::instance_norm(tokens);
  const auto gamma =
      ad::linear(tokens, params_.get("cln.gamma.weight"), params_.get("cln.gamma.bias"));
  const auto lambda =
      ad::linear(tokens, params_.get("cln.lambda.weight"), params_.get("cln.lambda.bias"));
  auto v = ad::add(ad::mul(ad::gather_rows(gamma, std::span<const std::size_t>(ends)),
                           ad::gather_rows(normed, std::span<const std::size_t>(starts))),
                   ad::gather_rows(lambda, std::span<const std::size_t>(ends)));
  if (!config_.use_region_embedding) return v;
  const std::vector<Tensor<T>> parts = {
      v, ad::gather_rows(params_.get("region_embeddings"), std::span<const std::size_t>(regions))};
  return ad::concat_cols<T>(parts);
}

template <typename T>
Tensor<T> BoundaryOffsetModel<T>::span_representation(const Tensor<T>& tokens) const {
  const std::size_t n = tokens.dim(0);
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  cells.reserve(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cells.emplace_back(i, j);
  return span_representation(tokens, cells);
}

template <typename T>
Tensor<T> BoundaryOffsetModel<T>::biaffine_score(const Tensor<T>& types, const Tensor<T>& spans,
                                                 ForwardContext ctx) const {
  require_rng(ctx);
  const double rate = config_.biaffine_dropout;
  const auto h = maybe_dropout(
      ad::gelu(ad::linear(types, params_.get("biaffine.type_proj.weight"),
                          params_.get("biaffine.type_proj.bias"))),
      rate, ctx);
  const auto v = maybe_dropout(
      ad::gelu(ad::linear(spans, params_.get("biaffine.span_proj.weight"),
                          params_.get("biaffine.span_proj.bias"))),
      rate, ctx);
  return ad::biaffine(h, v, params_.get("biaffine.bilinear"), params_.get("biaffine.linear"),
                      params_.get("biaffine.bias"));
}

template <typename T>
Tensor<T> BoundaryOffsetModel<T>::conv_stack(const Tensor<T>& scores, std::size_t length) const {
  if (!config_.use_conv_stack) return scores;
  if (scores.rank() != 4) throw ad::ShapeError("conv_stack expects [M,N,N,L], got " +
                                               ad::to_string(scores.shape()));
  const std::size_t m = scores.dim(0), n = scores.dim(1), labels = scores.dim(3);
  Tensor<T> input = scores;
  if (length < n) {
    std::vector<T> mask(scores.size(), T(0));
    for (std::size_t t = 0; t < m; ++t)
      for (std::size_t i = 0; i < length; ++i)
        for (std::size_t j = 0; j < length; ++j)
          std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(((t * n + i) * n + j) * labels),
                      labels, T(1));
    input = ad::mul(scores, Tensor<T>::from(scores.shape(), std::move(mask)));
  }
  const std::size_t cells = m * n * n;
  std::vector<Tensor<T>> branches;
  for (std::size_t c = 0; c < config_.conv_dilations.size(); ++c) {
    const auto q = ad::gelu(ad::conv3d(input, params_.get(conv_name(c, "kernel")),
                                       params_.get(conv_name(c, "bias")),
                                       config_.conv_dilations[c]));
    branches.push_back(ad::reshape(q, {cells, q.dim(3)}));
  }
  const auto mixed = ad::linear(ad::concat_cols<T>(branches), params_.get("conv.output.weight"),
                                params_.get("conv.output.bias"));
  return ad::reshape(mixed, scores.shape());
}

template <typename T>
Tensor<T> BoundaryOffsetModel<T>::forward(const SentenceInput& input, ForwardContext ctx) const {
  const auto encoded = encode_sequence(input, ctx);
  const auto spans = span_representation(encoded.tokens);
  const auto scores = biaffine_score(encoded.types, spans, ctx);
  const std::size_t n = input.padded_length();
  const auto grid = ad::reshape(scores, {type_count_, n, n, config_.label_count()});
  return conv_stack(grid, input.length);
}

template <typename T>
OffsetGrid predict_grid(const Tensor<T>& logits, std::size_t length, int max_offset) {
  if (logits.rank() != 4 || logits.dim(1) != logits.dim(2))
    throw ad::ShapeError("predict_grid expects [M,N,N,L], got " + ad::to_string(logits.shape()));
  const std::size_t m = logits.dim(0), n = logits.dim(1), labels = logits.dim(3);
  if (labels != LabelSpace(max_offset).size())
    throw ad::ShapeError(fmt::format("predict_grid: {} labels do not fit S = {}", labels, max_offset));
  if (length > n) throw ValidationError("predict_grid: length exceeds the logit grid");
  OffsetGrid grid(m, length, max_offset);
  const auto values = logits.values();
  for (std::size_t t = 0; t < m; ++t)
    for (std::size_t i = 0; i < length; ++i)
      for (std::size_t j = 0; j < length; ++j) {
        const auto row = values.subspan(((t * n + i) * n + j) * labels, labels);
        const auto best = std::max_element(row.begin(), row.end()) - row.begin();
        grid.set(t, i, j, static_cast<LabelIndex>(best));
      }
  return grid;
}

template <typename T>
Tensor<T> grid_loss(const Tensor<T>& logits, const OffsetGrid& gold,
                    std::span<const std::uint8_t> mask) {
  const std::size_t labels = logits.dim(logits.rank() - 1);
  const std::size_t rows = logits.size() / labels;
  if (gold.cells().size() != rows)
    throw ad::ShapeError(fmt::format("grid_loss: {} gold cells for {} logit rows",
                                     gold.cells().size(), rows));
  return ad::softmax_cross_entropy(ad::reshape(logits, {rows, labels}), gold.cells(), mask);
}

std::vector<std::uint8_t> cell_mask(std::size_t types, std::size_t padded_length,
                                    std::size_t length) {
  std::vector<std::uint8_t> mask(types * padded_length * padded_length, 0);
  for (std::size_t t = 0; t < types; ++t)
    for (std::size_t i = 0; i < length; ++i)
      for (std::size_t j = 0; j < length; ++j)
        mask[(t * padded_length + i) * padded_length + j] = 1;
  return mask;
}

ad::GradCheckResult model_grad_check(std::uint64_t seed, double sample_fraction, bool full) {
  ModelConfig config;
  config.max_offset = 1;
  config.embedding_dim = 6;
  config.hidden_size = 8;
  config.region_embedding_size = 3;
  config.biaffine_size = 5;
  config.conv_dilations = {1, 2};
  config.seed = seed;
  config.use_type_inputs = full;
  config.use_conv_stack = full;
  BoundaryOffsetModel<double> model(config, 10, 2);

  // Unit-scale embeddings keep gradients well above finite-difference noise.
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<Tensor<double>> params;
  for (const auto& p : model.parameters().entries()) {
    if (p.name.ends_with("embeddings") || p.name == "type_tokens") {
      auto t = p.tensor;
      for (auto& v : t.mutable_values()) v = normal(rng);
    }
    params.push_back(p.tensor);
  }

  SentenceInput input;
  input.token_ids = {2, 3, 4, 5};
  input.length = 4;
  const std::vector<EntityMention> entities = {{0, 1, 2}, {1, 0, 3}};
  const auto gold = encode_grid(4, entities, 2, 1);
  const auto mask = cell_mask(2, 4, 4);
  return ad::grad_check(
      [&](std::span<const Tensor<double>>) { return grid_loss(model.forward(input, {}), gold, mask); },
      params, {.step = 1e-5, .seed = seed, .sample_fraction = sample_fraction});
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class BoundaryOffsetModel<float>;
template class BoundaryOffsetModel<double>;
template OffsetGrid predict_grid(const Tensor<float>&, std::size_t, int);
template OffsetGrid predict_grid(const Tensor<double>&, std::size_t, int);
template Tensor<float> grid_loss(const Tensor<float>&, const OffsetGrid&,
                                 std::span<const std::uint8_t>);
template Tensor<double> grid_loss(const Tensor<double>&, const OffsetGrid&,
                                  std::span<const std::uint8_t>);

}  // namespace bopn
