#include "bopn/training.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "bopn/autodiff/kernels.hpp"
#include "bopn/checkpoint.hpp"
#include "bopn/offset_codec.hpp"

namespace bopn {

namespace fs = std::filesystem;
using ad::Tensor;

Batch make_batch(std::span<const SentenceInput> inputs, std::span<const OffsetGrid> gold,
                 std::span<const std::size_t> indices) {
  if (inputs.size() != gold.size()) throw ValidationError("inputs and gold grids differ in count");
  if (indices.empty()) throw ValidationError("empty batch");
  Batch batch;
  for (std::size_t k : indices) {
    if (k >= inputs.size()) throw ValidationError(fmt::format("batch index {} out of range", k));
    batch.padded_length = std::max(batch.padded_length, inputs[k].length);
  }
  const std::size_t n = batch.padded_length;
  for (std::size_t k : indices) {
    const auto& in = inputs[k];
    const auto& g = gold[k];
    if (g.length() != in.length)
      throw ValidationError(fmt::format("sentence {}: gold grid length {} but {} tokens", k,
                                        g.length(), in.length));
    SentenceInput padded = in;
    if (padded.features.empty()) padded.token_ids.resize(n, Vocabulary::kPad);
    else padded.token_ids.assign(n, Vocabulary::kPad);
    batch.inputs.push_back(std::move(padded));

    OffsetGrid grid(g.types(), n, g.max_offset());
    for (std::size_t m = 0; m < g.types(); ++m)
      for (std::size_t i = 0; i < in.length; ++i)
        for (std::size_t j = 0; j < in.length; ++j) grid.set(m, i, j, g.at(m, i, j));
    batch.gold.push_back(std::move(grid));
    batch.masks.push_back(cell_mask(g.types(), n, in.length));
  }
  return batch;
}

template <typename T>
Tensor<T> batch_loss(const BoundaryOffsetModel<T>& model, const Batch& batch, ForwardContext ctx) {
  Tensor<T> total;
  for (std::size_t k = 0; k < batch.inputs.size(); ++k) {
    const auto loss = grid_loss(model.forward(batch.inputs[k], ctx), batch.gold[k], batch.masks[k]);
    total = total.defined() ? ad::add(total, loss) : loss;
  }
  return ad::mul(total, Tensor<T>::scalar(T(1) / static_cast<T>(batch.inputs.size())));
}

double lr_schedule(std::size_t step, std::size_t total, double peak, double warm_factor) {
  if (total == 0 || step >= total) return 0.0;
  const double warm = warm_factor * static_cast<double>(total);
  const double s = static_cast<double>(step);
  if (s < warm) return peak * s / warm;
  return peak * (static_cast<double>(total) - s) / (static_cast<double>(total) - warm);
}

template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm) {
  double squared = 0.0;
  for (const auto& p : params.entries())
    for (T g : p.tensor.grad()) squared += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(squared);
  if (std::isfinite(norm) && norm > max_norm && max_norm > 0.0) {
    const T scale = static_cast<T>(max_norm / norm);
    for (const auto& p : params.entries()) {
      auto tensor = p.tensor;
      if (!tensor.has_grad()) continue;
      for (auto& g : tensor.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

template <typename T>
OptimizerState<T> make_optimizer(const ParameterSet<T>& params, const ModelConfig& config) {
  OptimizerState<T> state;
  for (const auto& p : params.entries()) {
    state.first_moment.emplace_back(p.tensor.size(), T(0));
    state.second_moment.emplace_back(p.tensor.size(), T(0));
  }
  state.beta1 = config.adam_beta1;
  state.beta2 = config.adam_beta2;
  state.epsilon = config.adam_epsilon;
  state.weight_decay = config.weight_decay;
  return state;
}

template <typename T>
void adamw_step(ParameterSet<T>& params, OptimizerState<T>& state, double lr) {
  const auto entries = params.entries();
  if (state.first_moment.size() != entries.size())
    throw ValidationError("optimizer state does not match the parameter set");
  for (const auto& p : entries)
    for (T g : p.tensor.grad())
      if (!std::isfinite(static_cast<double>(g)))
        throw TrainingError("non-finite gradient in parameter " + p.name);

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const double decay = 1.0 - lr * state.weight_decay;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto tensor = entries[k].tensor;
    auto values = tensor.mutable_values();
    const auto grad = tensor.grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != values.size()) throw ValidationError("optimizer moment shape mismatch");
    for (std::size_t e = 0; e < values.size(); ++e) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[e]);
      const double m1 = state.beta1 * m[e] + (1.0 - state.beta1) * g;
      const double v1 = state.beta2 * v[e] + (1.0 - state.beta2) * g * g;
      m[e] = static_cast<T>(m1);
      v[e] = static_cast<T>(v1);
      const double update = (m1 / correction1) / (std::sqrt(v1 / correction2) + state.epsilon);
      values[e] = static_cast<T>(static_cast<double>(values[e]) * decay - lr * update);
    }
  }
}

std::vector<SentenceInput> make_inputs(const Corpus& corpus, const Vocabulary& vocabulary,
                                       const EmbeddingFile* embeddings) {
  if (embeddings != nullptr && embeddings->sentences.size() != corpus.documents.size())
    throw ValidationError(fmt::format("{} embedding blocks for {} documents",
                                      embeddings->sentences.size(), corpus.documents.size()));
  std::vector<SentenceInput> out;
  out.reserve(corpus.documents.size());
  for (std::size_t k = 0; k < corpus.documents.size(); ++k) {
    const auto& tokens = corpus.documents[k].sentence.tokens;
    SentenceInput in;
    in.length = tokens.size();
    if (embeddings != nullptr) {
      in.features = embeddings->sentences[k];
      in.feature_dim = embeddings->dim;
      if (in.features.size() != in.length * in.feature_dim)
        throw ValidationError(fmt::format("document {}: embedding rows do not match its length", k + 1));
    } else {
      in.token_ids = vocabulary.ids(tokens);
    }
    out.push_back(std::move(in));
  }
  return out;
}

template <typename T>
std::vector<OffsetGrid> predict_grids(const BoundaryOffsetModel<T>& model,
                                      std::span<const SentenceInput> inputs) {
  std::vector<OffsetGrid> grids;
  grids.reserve(inputs.size());
  for (const auto& in : inputs)
    grids.push_back(predict_grid(model.forward(in, {}), in.length, model.config().max_offset));
  return grids;
}

namespace {

nlohmann::ordered_json metrics_json(const EpochMetrics& m) {
  auto brief = [](const PRFScore& s) {
    return nlohmann::ordered_json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
  };
  return {{"epoch", m.epoch},
          {"train_loss", m.train_loss},
          {"lr", m.lr},
          {"dev",
           {{"center", brief(m.dev.center_only)},
            {"all", brief(m.dev.all_labels)},
            {"rules", brief(m.dev.with_rules)}}}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

void write_status(const fs::path& dir, const std::string& status, const TrainResult& result,
                  const std::string& detail = {}) {
  if (dir.empty()) return;
  nlohmann::ordered_json j = {{"status", status},
                              {"epochs_completed", result.epochs.size()},
                              {"best_epoch", result.best_epoch},
                              {"best_dev_f1", result.best_dev_f1}};
  if (!detail.empty()) j["detail"] = detail;
  write_text(dir / "status.json", j.dump(2) + "\n");
}

std::vector<OffsetGrid> training_grids(const TrainingData& data, const ModelConfig& config) {
  const auto& docs = data.train.documents;
  if (!data.train_grids) {
    std::vector<OffsetGrid> grids;
    grids.reserve(docs.size());
    for (const auto& d : docs)
      grids.push_back(
          encode_grid(d.sentence.size(), d.entities, data.train.types.size(), config.max_offset));
    return grids;
  }
  const auto& grids = *data.train_grids;
  if (grids.size() != docs.size())
    throw ValidationError(fmt::format("grid file holds {} grids for {} training documents",
                                      grids.size(), docs.size()));
  for (std::size_t k = 0; k < grids.size(); ++k) {
    if (grids[k].max_offset() != config.max_offset)
      throw ConfigError(fmt::format(
          "grid file was encoded with S = {} but the config sets max_offset = {}; re-encode the "
          "corpus or change the config",
          grids[k].max_offset(), config.max_offset));
    if (grids[k].types() != data.train.types.size() || grids[k].length() != docs[k].sentence.size())
      throw ValidationError(fmt::format("grid {} does not match training document {}", k + 1, k + 1));
    // Center cells must reproduce the gold mentions; catches a file encoded
    // from another corpus or with another type order.
    if (decode_grid(grids[k], DecodeMode::CenterOnly) != docs[k].entity_set())
      throw ValidationError(fmt::format("grid {} encodes different entities than training document {}",
                                        k + 1, k + 1));
  }
  return grids;
}

}  // namespace

TrainResult train(const TrainingData& data, const ModelConfig& config, const TrainOptions& options) {
  config.validate();
  if (data.train.documents.empty()) throw ValidationError("training corpus is empty");
  if (data.train.types.names() != data.dev.types.names())
    throw ValidationError("training and dev corpora use different type inventories");
  if (data.train_embeddings.has_value() != data.dev_embeddings.has_value())
    throw ValidationError("precomputed embeddings must be given for both training and dev data");

  TrainResult result;
  for (const auto& d : data.train.documents)
    for (const auto& token : d.sentence.tokens) result.vocabulary.add(token);

  const auto gold = training_grids(data, config);
  const auto train_inputs = make_inputs(data.train, result.vocabulary,
                                        data.train_embeddings ? &*data.train_embeddings : nullptr);
  const auto dev_inputs = make_inputs(data.dev, result.vocabulary,
                                      data.dev_embeddings ? &*data.dev_embeddings : nullptr);
  const auto dev_gold = data.dev.entity_sets();
  const std::size_t feature_dim = data.train_embeddings ? data.train_embeddings->dim : 0;

  const fs::path& out_dir = options.output_dir;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(out_dir / "config.ini", render_config({config, options.data_paths}));
    write_text(out_dir / "metrics.jsonl", "");
  }

  result.model = std::make_unique<BoundaryOffsetModel<float>>(config, result.vocabulary.size(),
                                                              data.train.types.size());
  auto& model = *result.model;
  auto optimizer = make_optimizer(model.parameters(), config);
  std::mt19937_64 shuffle_rng(config.seed ^ 0x5eedULL);
  std::mt19937_64 dropout_rng(config.seed + 1);

  const std::size_t count = train_inputs.size();
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  const std::size_t batches_per_epoch = (count + batch_size - 1) / batch_size;
  const std::size_t total_steps = batches_per_epoch * static_cast<std::size_t>(config.epochs);
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const auto first = order.begin() + static_cast<std::ptrdiff_t>(b * batch_size);
      const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(count, (b + 1) * batch_size));
      const std::vector<std::size_t> indices(first, last);
      const auto batch = make_batch(train_inputs, gold, indices);

      model.parameters().zero_grad();
      const auto loss = batch_loss(model, batch, {true, &dropout_rng});
      const double value = loss.item();
      if (!std::isfinite(value)) {
        const std::string detail = fmt::format("loss became non-finite at epoch {}, batch {}", epoch, b + 1);
        write_status(out_dir, "diverged", result, detail);
        throw TrainingError(detail + (result.best_epoch > 0
                                          ? fmt::format("; checkpoint from epoch {} kept", result.best_epoch)
                                          : std::string("; no checkpoint was saved")));
      }
      ad::backward(loss);
      clip_grad_norm(model.parameters(), config.grad_clip);
      lr = lr_schedule(optimizer.step + 1, total_steps, config.learning_rate, config.warm_factor);
      try {
        adamw_step(model.parameters(), optimizer, lr);
      } catch (const TrainingError& e) {
        write_status(out_dir, "diverged", result, e.what());
        throw;
      }
      loss_sum += value * static_cast<double>(indices.size());
    }

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.train_loss = loss_sum / static_cast<double>(count);
    metrics.lr = lr;
    metrics.dev = score_decode_modes(dev_gold, predict_grids(model, dev_inputs));
    result.epochs.push_back(metrics);

    const double f1 = metrics.dev.with_rules.f1;
    if (f1 > result.best_dev_f1) {
      result.best_dev_f1 = f1;
      result.best_epoch = epoch;
      if (!out_dir.empty())
        save_checkpoint(out_dir / "model.ckpt", model, result.vocabulary, data.train.types, feature_dim);
    }
    if (!out_dir.empty()) {
      std::ofstream log(out_dir / "metrics.jsonl", std::ios::app);
      log << metrics_json(metrics).dump() << '\n';
      if (!log) throw IoError("cannot append to metrics log in " + out_dir.string());
    }
    spdlog::info("epoch {} loss {:.5f} dev F1 center {:.4f} all {:.4f} rules {:.4f}", epoch,
                 metrics.train_loss, metrics.dev.center_only.f1, metrics.dev.all_labels.f1, f1);
    if (options.on_epoch) options.on_epoch(metrics);
  }
  write_status(out_dir, "complete", result);
  return result;
}

template Tensor<float> batch_loss(const BoundaryOffsetModel<float>&, const Batch&, ForwardContext);
template Tensor<double> batch_loss(const BoundaryOffsetModel<double>&, const Batch&, ForwardContext);
template double clip_grad_norm(ParameterSet<float>&, double);
template double clip_grad_norm(ParameterSet<double>&, double);
template OptimizerState<float> make_optimizer(const ParameterSet<float>&, const ModelConfig&);
template OptimizerState<double> make_optimizer(const ParameterSet<double>&, const ModelConfig&);
template void adamw_step(ParameterSet<float>&, OptimizerState<float>&, double);
template void adamw_step(ParameterSet<double>&, OptimizerState<double>&, double);
template std::vector<OffsetGrid> predict_grids(const BoundaryOffsetModel<float>&,
                                               std::span<const SentenceInput>);
template std::vector<OffsetGrid> predict_grids(const BoundaryOffsetModel<double>&,
                                               std::span<const SentenceInput>);

}  // namespace bopn
