#include <doctest.h>

#include <cmath>
#include <limits>

#include "bopn/autodiff/kernels.hpp"
#include "bopn/checkpoint.hpp"
#include "bopn/offset_codec.hpp"
#include "bopn/training.hpp"
#include "support/temp_dir.hpp"

using namespace bopn;
using ad::Tensor;
using bopn::testing::read_text;
using bopn::testing::TempDir;

namespace {

ModelConfig tiny_config(int s = 1) {
  ModelConfig c;
  c.max_offset = s;
  c.embedding_dim = 6;
  c.hidden_size = 8;
  c.region_embedding_size = 3;
  c.biaffine_size = 5;
  c.conv_dilations = {1, 2};
  c.seed = 11;
  c.epochs = 5;
  c.batch_size = 2;
  c.learning_rate = 5e-3;
  return c;
}

Corpus small_corpus() {
  return Corpus{TypeInventory({"A", "B"}),
                {{Sentence{{"the", "red", "fox", "ran"}}, {{0, 1, 2}, {1, 2, 2}}},
                 {Sentence{{"a", "fox"}}, {{1, 1, 1}}},
                 {Sentence{{"red", "red", "dog", "sat", "down"}}, {{0, 0, 1}, {0, 0, 2}}},
                 {Sentence{{"dog"}}, {}},
                 {Sentence{{"the", "dog", "ran"}}, {{1, 1, 1}}}}};
}

template <typename T>
void set_values(const Tensor<T>& t, std::vector<T> values) {
  auto copy = t;
  REQUIRE(copy.mutable_values().size() == values.size());
  std::copy(values.begin(), values.end(), copy.mutable_values().begin());
}

template <typename T>
void set_grad(const Tensor<T>& t, std::vector<T> values) {
  auto copy = t;
  auto grad = copy.mutable_grad();
  REQUIRE(grad.size() == values.size());
  std::copy(values.begin(), values.end(), grad.begin());
}

}  // namespace

TEST_CASE("uniform logits give ln L per cell") {
  const auto logits = Tensor<double>::zeros({1, 3, 3, 10});
  const OffsetGrid gold = encode_grid(3, std::vector<EntityMention>{{0, 0, 1}}, 1, 2);
  const auto loss = grid_loss(logits, gold, cell_mask(1, 3, 3));
  CHECK(loss.item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("two-cell hand-computed loss") {
  // Two types, one token, S = 0: labels {Center, OutOfRange}.
  const auto logits = Tensor<double>::from({2, 1, 1, 2}, {0.0, std::log(3.0), std::log(2.0), 0.0});
  OffsetGrid gold(2, 1, 0);
  gold.set(0, 0, 0, 0);
  gold.set(1, 0, 0, 1);
  const auto loss = grid_loss(logits, gold, cell_mask(2, 1, 1));
  // -log(1/4) and -log(1/3), averaged.
  CHECK(loss.item() == doctest::Approx(std::log(12.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("batch loss is the mean of per-sentence losses and ignores padding") {
  auto config = tiny_config();
  const auto corpus = small_corpus();
  Vocabulary vocab;
  for (const auto& d : corpus.documents)
    for (const auto& t : d.sentence.tokens) vocab.add(t);
  BoundaryOffsetModel<double> model(config, vocab.size(), 2);
  const auto inputs = make_inputs(corpus, vocab);
  std::vector<OffsetGrid> gold;
  for (const auto& d : corpus.documents) gold.push_back(encode_grid(d.sentence.size(), d.entities, 2, 1));

  const std::vector<std::size_t> pair = {1, 2};
  const auto batch = make_batch(inputs, gold, pair);
  CHECK(batch.padded_length == 5);
  CHECK(batch.inputs[0].token_ids.size() == 5);
  CHECK(batch.gold[0].length() == 5);

  const auto joint = batch_loss(model, batch, {});
  double separate = 0.0;
  std::vector<std::vector<double>> single_grads;
  for (std::size_t k : pair) {
    const std::vector<std::size_t> one = {k};
    const auto b = make_batch(inputs, gold, one);
    CHECK(b.padded_length == inputs[k].length);
    model.parameters().zero_grad();
    const auto loss = batch_loss(model, b, {});
    ad::backward(loss);
    separate += loss.item() / 2.0;
    for (const auto& p : model.parameters().entries()) {
      std::vector<double> g(p.tensor.grad().begin(), p.tensor.grad().end());
      g.resize(p.tensor.size(), 0.0);
      single_grads.push_back(std::move(g));
    }
  }
  CHECK(joint.item() == doctest::Approx(separate).epsilon(1e-10));

  model.parameters().zero_grad();
  ad::backward(batch_loss(model, batch, {}));
  const auto entries = model.parameters().entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    std::vector<double> g(entries[p].tensor.grad().begin(), entries[p].tensor.grad().end());
    g.resize(entries[p].tensor.size(), 0.0);
    for (std::size_t e = 0; e < g.size(); ++e) {
      const double expected = (single_grads[p][e] + single_grads[entries.size() + p][e]) / 2.0;
      CHECK(g[e] == doctest::Approx(expected).epsilon(1e-8).scale(1e-12));
    }
  }

  const std::vector<std::size_t> bad = {9};
  CHECK_THROWS_AS(make_batch(inputs, gold, bad), ValidationError);
}

TEST_CASE("learning-rate schedule") {
  // total 100, warm 10 steps, peak 1e-3.
  CHECK(lr_schedule(5, 100, 1e-3, 0.1) == doctest::Approx(5e-4));
  CHECK(lr_schedule(10, 100, 1e-3, 0.1) == doctest::Approx(1e-3));
  CHECK(lr_schedule(55, 100, 1e-3, 0.1) == doctest::Approx(5e-4));
  CHECK(lr_schedule(100, 100, 1e-3, 0.1) == 0.0);
  CHECK(lr_schedule(150, 100, 1e-3, 0.1) == 0.0);
  CHECK(lr_schedule(0, 100, 1e-3, 0.1) == 0.0);
  CHECK(lr_schedule(1, 10, 2.0, 0.0) == doctest::Approx(1.8));
}

TEST_CASE("AdamW update rules") {
  ModelConfig config;
  ParameterSet<double> params;
  const auto w = params.add("w", {3});
  set_values(w, {1.0, -2.0, 0.5});

  SUBCASE("zero gradient and no decay leaves parameters unchanged") {
    config.weight_decay = 0.0;
    auto state = make_optimizer(params, config);
    set_grad(w, {0.0, 0.0, 0.0});
    adamw_step(params, state, 0.1);
    CHECK(w.values()[0] == 1.0);
    CHECK(w.values()[1] == -2.0);
    CHECK(state.step == 1);
  }
  SUBCASE("first step moves each element by lr times the gradient sign") {
    config.weight_decay = 0.0;
    auto state = make_optimizer(params, config);
    set_grad(w, {1.0, -3.0, 0.0});
    adamw_step(params, state, 0.1);
    CHECK(w.values()[0] == doctest::Approx(0.9).epsilon(1e-7));
    CHECK(w.values()[1] == doctest::Approx(-1.9).epsilon(1e-7));
    CHECK(w.values()[2] == 0.5);
  }
  SUBCASE("weight decay alone shrinks by 1 - lr * wd") {
    config.weight_decay = 0.5;
    auto state = make_optimizer(params, config);
    adamw_step(params, state, 0.1);
    CHECK(w.values()[0] == doctest::Approx(0.95));
    CHECK(w.values()[1] == doctest::Approx(-1.9));
  }
  SUBCASE("non-finite gradient leaves everything untouched") {
    auto state = make_optimizer(params, config);
    set_grad(w, {1.0, std::numeric_limits<double>::quiet_NaN(), 0.0});
    CHECK_THROWS_AS(adamw_step(params, state, 0.1), TrainingError);
    CHECK(w.values()[0] == 1.0);
    CHECK(state.step == 0);
    CHECK(state.first_moment[0][0] == 0.0);
  }
}

TEST_CASE("gradient clipping scales to the global norm") {
  ParameterSet<double> params;
  const auto a = params.add("a", {2});
  const auto b = params.add("b", {1});
  set_grad(a, {3.0, 0.0});
  set_grad(b, {4.0});
  CHECK(clip_grad_norm(params, 10.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == 3.0);
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(b.grad()[0] == doctest::Approx(0.8));
}

TEST_CASE("training writes its outputs and is deterministic") {
  TempDir dir;
  TrainingData data{small_corpus(), small_corpus(), {}, {}, {}};
  const auto config = tiny_config();
  TrainOptions options;
  options.output_dir = dir / "run1";
  const auto first = train(data, config, options);
  options.output_dir = dir / "run2";
  const auto second = train(data, config, options);

  REQUIRE(first.epochs.size() == 5);
  for (std::size_t e = 0; e < 5; ++e) {
    CHECK(first.epochs[e].train_loss == second.epochs[e].train_loss);
    CHECK(std::isfinite(first.epochs[e].train_loss));
  }
  CHECK(first.epochs.back().train_loss < first.epochs.front().train_loss);
  CHECK(read_text(dir / "run1" / "metrics.jsonl") == read_text(dir / "run2" / "metrics.jsonl"));
  CHECK(read_text(dir / "run1" / "status.json").find("\"complete\"") != std::string::npos);
  CHECK(parse_config(read_text(dir / "run1" / "config.ini")).model == config);
  CHECK(first.best_epoch >= 1);

  const auto loaded = load_checkpoint(dir / "run1" / "model.ckpt");
  CHECK(loaded.model->config() == config);
  CHECK(loaded.vocabulary.tokens() == first.vocabulary.tokens());
}

TEST_CASE("S = 0 trains and grid files with another S are refused") {
  TrainingData data{small_corpus(), small_corpus(), {}, {}, {}};
  auto config = tiny_config(0);
  config.epochs = 2;
  const auto result = train(data, config);
  CHECK(result.epochs.size() == 2);

  std::vector<OffsetGrid> grids;
  for (const auto& d : data.train.documents) grids.push_back(encode_grid(d.sentence.size(), d.entities, 2, 2));
  data.train_grids = grids;
  CHECK_THROWS_AS(train(data, config), ConfigError);
  config.max_offset = 2;
  CHECK(train(data, config).epochs.size() == 2);
}

TEST_CASE("precomputed embeddings replace the token table") {
  const auto corpus = small_corpus();
  EmbeddingFile emb;
  emb.dim = 6;
  for (const auto& d : corpus.documents) {
    std::vector<float> rows(d.sentence.size() * 6);
    for (std::size_t k = 0; k < rows.size(); ++k) rows[k] = static_cast<float>(k % 7) * 0.1f;
    emb.sentences.push_back(rows);
  }
  TrainingData data{corpus, corpus, emb, emb, {}};
  auto config = tiny_config();
  config.epochs = 1;
  CHECK(train(data, config).epochs.size() == 1);
  config.embedding_dim = 4;
  CHECK_THROWS(train(data, config));
  data.dev_embeddings.reset();
  CHECK_THROWS_AS(train(data, config), ValidationError);
}
