#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "bopn/config_io.hpp"
#include "bopn/data_io.hpp"
#include "bopn/evaluation.hpp"
#include "bopn/model.hpp"
#include "bopn/vocabulary.hpp"

namespace bopn {

/// A non-finite gradient or loss stopped training.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sentences padded to the longest one, with gold grids of the same padded
/// size and a mask selecting the cells inside each true length.
struct Batch {
  std::size_t padded_length = 0;
  std::vector<SentenceInput> inputs;
  std::vector<OffsetGrid> gold;
  std::vector<std::vector<std::uint8_t>> masks;
};

/// `gold[k]` must have been encoded for `inputs[k]`'s true length.
Batch make_batch(std::span<const SentenceInput> inputs, std::span<const OffsetGrid> gold,
                 std::span<const std::size_t> indices);

/// Mean over sentences of each sentence's masked mean cell loss.
template <typename T>
ad::Tensor<T> batch_loss(const BoundaryOffsetModel<T>& model, const Batch& batch,
                         ForwardContext ctx);

/// Linear warmup from 0 to `peak` over warm_factor * total steps, then linear
/// decay to 0 at `total`. Steps past `total` give 0.
double lr_schedule(std::size_t step, std::size_t total, double peak, double warm_factor);

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm);

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
OptimizerState<T> make_optimizer(const ParameterSet<T>& params, const ModelConfig& config);

/// One decoupled-weight-decay Adam update. Parameters without a gradient are
/// treated as having a zero gradient. Throws TrainingError, before touching
/// anything, when any gradient is non-finite.
template <typename T>
void adamw_step(ParameterSet<T>& params, OptimizerState<T>& state, double lr);

/// Token ids (or precomputed rows) for every document.
std::vector<SentenceInput> make_inputs(const Corpus& corpus, const Vocabulary& vocabulary,
                                       const EmbeddingFile* embeddings = nullptr);

/// Argmax grids in evaluation mode.
template <typename T>
std::vector<OffsetGrid> predict_grids(const BoundaryOffsetModel<T>& model,
                                      std::span<const SentenceInput> inputs);

struct TrainingData {
  Corpus train;
  Corpus dev;
  std::optional<EmbeddingFile> train_embeddings;
  std::optional<EmbeddingFile> dev_embeddings;
  /// Pre-encoded training grids; must use the configured S.
  std::optional<std::vector<OffsetGrid>> train_grids;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double lr = 0.0;
  ModeScores dev;
};

struct TrainOptions {
  /// Receives metrics.jsonl, status.json, config.ini and model.ckpt; nothing
  /// is written when empty.
  std::filesystem::path output_dir;
  /// Data paths recorded in the config.ini echo.
  DataPaths data_paths;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;
  double best_dev_f1 = -1.0;
  Vocabulary vocabulary;
  std::unique_ptr<BoundaryOffsetModel<float>> model;  // state after the last epoch
};

/// Seeded shuffled mini-batches, AdamW with clipping and the warmup-decay
/// schedule; dev scored after every epoch and the best checkpoint by
/// AllLabelsWithRules F1 kept. On a non-finite loss, writes a "diverged"
/// status and throws TrainingError; the last saved checkpoint stays.
TrainResult train(const TrainingData& data, const ModelConfig& config,
                  const TrainOptions& options = {});

}  // namespace bopn
