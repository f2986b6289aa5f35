#include <doctest.h>

#include <random>

#include "bopn/checkpoint.hpp"
#include "bopn/config_io.hpp"
#include "bopn/data_io.hpp"
#include "bopn/offset_codec.hpp"
#include "support/temp_dir.hpp"

using namespace bopn;
using bopn::testing::read_text;
using bopn::testing::TempDir;

namespace {

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("jsonl reader maps entities directly") {
  TempDir dir;
  const auto file = dir.write(
      "c.jsonl",
      R"({"tokens": ["a", "b", "c", "d", "e"], "entities": [{"type": "PER", "start": 1, "end": 3}]})"
      "\n\n"
      R"({"tokens": ["x", "y", "z", "w"], "entities": [{"type": "ORG", "start": 1, "end": 3}, {"type": "ORG", "start": 2, "end": 3}]})"
      "\n");
  const auto corpus = read_jsonl(file);
  REQUIRE(corpus.documents.size() == 2);
  CHECK(corpus.types.names() == std::vector<std::string>{"ORG", "PER"});
  CHECK(corpus.documents[0].entities == std::vector<EntityMention>{{1, 1, 3}});
  // Nested mentions are kept.
  CHECK(corpus.documents[1].entities.size() == 2);
}

TEST_CASE("jsonl reader errors carry the line") {
  TempDir dir;
  const auto out_of_range = dir.write(
      "bad.jsonl", R"({"tokens": ["a"], "entities": []})"
                   "\n"
                   R"({"tokens": ["a","b","c","d","e"], "entities": [{"type": "PER", "start": 1, "end": 5}]})"
                   "\n");
  const auto message = error_of([&] { read_jsonl(out_of_range); });
  CHECK(message.find("bad.jsonl:2") != std::string::npos);
  CHECK(message.find("end out of range") != std::string::npos);

  const auto malformed = dir.write("m.jsonl", "{\"tokens\": [\n");
  CHECK(error_of([&] { read_jsonl(malformed); }).find("m.jsonl:1") != std::string::npos);

  const auto dup = dir.write(
      "d.jsonl",
      R"({"tokens": ["a","b"], "entities": [{"type": "P", "start": 0, "end": 0}, {"type": "P", "start": 0, "end": 0}]})");
  CHECK(error_of([&] { read_jsonl(dup); }).find("duplicate") != std::string::npos);

  const auto known = dir.write(
      "k.jsonl", R"({"tokens": ["a"], "entities": [{"type": "LOC", "start": 0, "end": 0}]})");
  CHECK(error_of([&] { read_jsonl(known, TypeInventory({"PER"})); }).find("unknown entity type") !=
        std::string::npos);
  CHECK_THROWS_AS(read_jsonl(dir / "missing.jsonl"), IoError);
}

TEST_CASE("prediction writer schema and roundtrip") {
  TempDir dir;
  const Corpus corpus{TypeInventory({"LOC", "PER"}),
                      {{Sentence{{"a", "b", "c", "d", "e"}}, {{1, 2, 4}, {0, 0, 1}, {1, 0, 4}}},
                       {Sentence{{"q"}}, {}}}};
  const auto file = dir / "p.jsonl";
  write_jsonl(file, corpus);
  const auto text = read_text(file);
  CHECK(text.find(R"({"type":"PER","start":2,"end":4})") != std::string::npos);
  CHECK(text.find(R"("entities":[])") != std::string::npos);
  CHECK(text.find(R"({"tokens":["a")") == 0);

  const auto back = read_jsonl(file, corpus.types);
  REQUIRE(back.documents.size() == 2);
  CHECK(back.entity_sets() == corpus.entity_sets());
  CHECK(back.documents[0].sentence.tokens == corpus.documents[0].sentence.tokens);

  const std::vector<EntitySet> wrong(3);
  CHECK_THROWS_AS(write_predictions(file, corpus, wrong), ValidationError);
}

TEST_CASE("BIO reader follows the documented automaton") {
  TempDir dir;
  const auto file = dir.write("c.bio",
                              "-DOCSTART- O\n\n"
                              "John B-PER\nSmith I-PER\nran O\n\n"
                              "a O\nb O\nc O\n\n"
                              "x B-PER\ny B-ORG\n\n"
                              "p I-LOC\nq I-LOC\nr I-PER\n");
  const auto corpus = read_conll_bio(file);
  REQUIRE(corpus.documents.size() == 4);
  const int per = *corpus.types.find("PER");
  const int org = *corpus.types.find("ORG");
  const int loc = *corpus.types.find("LOC");
  CHECK(corpus.documents[0].entities == std::vector<EntityMention>{{per, 0, 1}});
  CHECK(corpus.documents[1].entities.empty());
  CHECK(corpus.documents[2].entities == std::vector<EntityMention>{{per, 0, 0}, {org, 1, 1}});
  CHECK(corpus.documents[3].entities == std::vector<EntityMention>{{loc, 0, 1}, {per, 2, 2}});

  const auto bad = dir.write("b.bio", "a O\nb X-PER\n");
  CHECK(error_of([&] { read_conll_bio(bad); }).find("b.bio:2") != std::string::npos);
}

TEST_CASE("BIO write after read is idempotent after one normalisation") {
  TempDir dir;
  const auto file = dir.write("c.bio", "p I-LOC\nq I-LOC\nr O\ns I-PER\n\nt B-PER\n");
  const auto first = read_conll_bio(file);
  write_conll_bio(dir / "n1.bio", first);
  const auto normalised = read_text(dir / "n1.bio");
  CHECK(normalised.find("p\tB-LOC") != std::string::npos);
  write_conll_bio(dir / "n2.bio", read_conll_bio(dir / "n1.bio"));
  CHECK(read_text(dir / "n2.bio") == normalised);

  const Corpus nested{TypeInventory({"P"}), {{Sentence{{"a", "b"}}, {{0, 0, 1}, {0, 1, 1}}}}};
  CHECK_THROWS_AS(write_conll_bio(dir / "x.bio", nested), ValidationError);
}

TEST_CASE("embedding file roundtrip and validation") {
  TempDir dir;
  EmbeddingFile file{3, {{1, 2, 3, 4, 5, 6}, {-1.5f, 0, 0.25f}}};
  write_embeddings(dir / "e.bin", file);
  const std::vector<std::size_t> lengths = {2, 1};
  const auto back = read_embeddings(dir / "e.bin", lengths);
  CHECK(back.dim == 3);
  CHECK(back.sentences == file.sentences);
  CHECK(std::filesystem::file_size(dir / "e.bin") == 16 + 9 * 4);

  const std::vector<std::size_t> wrong_count = {2};
  CHECK_THROWS_AS(read_embeddings(dir / "e.bin", wrong_count), ValidationError);
  const std::vector<std::size_t> too_long = {2, 2};
  CHECK_THROWS_AS(read_embeddings(dir / "e.bin", too_long), ValidationError);
  const std::vector<std::size_t> too_short = {1, 1};
  CHECK_THROWS_AS(read_embeddings(dir / "e.bin", too_short), ValidationError);
}

TEST_CASE("grid binary roundtrip and debug dump") {
  TempDir dir;
  const std::vector<EntityMention> es = {{0, 1, 3}};
  std::vector<OffsetGrid> grids = {encode_grid(5, es, 2, 2), encode_grid(2, {}, 2, 0)};
  write_grids(dir / "g.bin", grids);
  CHECK(read_grids(dir / "g.bin") == grids);
  CHECK(std::filesystem::file_size(dir / "g.bin") == 24 + (12 + 50 * 2) + (12 + 8 * 2));

  const Corpus corpus{TypeInventory({"PER", "ORG"}),
                      {{Sentence{{"a", "b", "c", "d", "e"}}, es}, {Sentence{{"x", "y"}}, {}}}};
  const auto dump = grids_debug_json(corpus, grids);
  CHECK(dump[0]["grids"]["PER"][1][2] == "-1E");
  CHECK(dump[0]["grids"]["PER"][1][3] == "0");
  CHECK(dump[0]["grids"]["PER"][3][3] == "2S");
  CHECK(dump[0]["grids"]["ORG"][1][3] == "×");

  dir.write("junk.bin", "not a grid file at all");
  CHECK_THROWS_AS(read_grids(dir / "junk.bin"), ValidationError);
}

TEST_CASE("config file parsing") {
  const auto config = parse_config(
      "[model]\nmax_offset = 1\nconv_dilations = 1, 2\nlstm_dropout = 0.25\n"
      "[ablation]\nuse_conv_stack = false\n[train]\nseed = 9\nlearning_rate = 5e-3\n"
      "[data]\ntrain = a.jsonl\n");
  CHECK(config.model.max_offset == 1);
  CHECK(config.model.conv_dilations == std::vector<int>{1, 2});
  CHECK(config.model.lstm_dropout == 0.25);
  CHECK_FALSE(config.model.use_conv_stack);
  CHECK(config.model.seed == 9);
  CHECK(config.model.learning_rate == 5e-3);
  CHECK(config.data.train == "a.jsonl");
  CHECK(config.model.hidden_size == ModelConfig{}.hidden_size);

  CHECK(error_of([] { parse_config("[model]\nbogus = 1\n"); }).find("bogus") != std::string::npos);
  CHECK(error_of([] { parse_config("[extra]\nx = 1\n"); }).find("unknown key") !=
        std::string::npos);
  CHECK_THROWS_AS(parse_config("[model]\nmax_offset = two\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[model]\nconv_kernel = 4\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("top = 1\n"), ConfigError);

  // Rendering is a fixed point of parsing.
  const auto echoed = render_config(config);
  const auto again = parse_config(echoed);
  CHECK(again.model == config.model);
  CHECK(render_config(again) == echoed);

  CHECK(config_from_json(config_to_json(config.model)) == config.model);
  auto json = nlohmann::json(config_to_json(config.model));
  json["extra"] = "1";
  CHECK_THROWS_AS(config_from_json(json), ConfigError);
}

TEST_CASE("checkpoint roundtrip and refusal") {
  TempDir dir;
  ModelConfig config;
  config.embedding_dim = 4;
  config.hidden_size = 6;
  config.region_embedding_size = 2;
  config.biaffine_size = 3;
  config.max_offset = 1;
  Vocabulary vocab;
  vocab.add("alpha");
  vocab.add("beta");
  const TypeInventory types({"PER", "ORG"});
  BoundaryOffsetModel<float> model(config, vocab.size(), types.size());
  save_checkpoint(dir / "m.ckpt", model, vocab, types);

  const auto loaded = load_checkpoint(dir / "m.ckpt");
  CHECK(loaded.model->config() == config);
  CHECK(loaded.vocabulary.tokens() == vocab.tokens());
  CHECK(loaded.types.names() == types.names());
  const auto a = model.parameters().entries();
  const auto b = loaded.model->parameters().entries();
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].name == b[k].name);
    CHECK(std::equal(a[k].tensor.values().begin(), a[k].tensor.values().end(),
                     b[k].tensor.values().begin()));
  }

  // Bump the version inside the manifest and expect a field diff.
  auto bytes = read_text(dir / "m.ckpt");
  const auto at = bytes.find("\"format_version\":1");
  REQUIRE(at != std::string::npos);
  bytes[at + 17] = '7';
  dir.write("v.ckpt", bytes);
  const auto message = error_of([&] { load_checkpoint(dir / "v.ckpt"); });
  CHECK(message.find("format_version: file has 7, expected 1") != std::string::npos);

  dir.write("t.ckpt", read_text(dir / "m.ckpt").substr(0, 200));
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "none.ckpt"), IoError);
}
