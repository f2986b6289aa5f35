#include <doctest.h>

#include <set>

#include "bopn/types.hpp"

using namespace bopn;

TEST_CASE("label space size follows 4S+2") {
  CHECK(LabelSpace(2).size() == 10);
  CHECK(LabelSpace(0).size() == 2);
  for (int s = 0; s <= 5; ++s) CHECK(LabelSpace(s).enumerate().size() == 4u * s + 2);
}

TEST_CASE("label index map is a bijection for S in 0..5") {
  for (int s = 0; s <= 5; ++s) {
    const LabelSpace space(s);
    std::set<LabelIndex> seen;
    for (std::size_t k = 0; k < space.size(); ++k) {
      const auto index = static_cast<LabelIndex>(k);
      const auto label = space.label_at(index);
      CHECK(space.index_of(label) == index);
      seen.insert(space.index_of(label));
    }
    CHECK(seen.size() == space.size());
    // Every label constructible from (kind, f) with |f| <= S maps inside [0, L).
    for (int f = -s; f <= s; ++f) {
      if (f == 0) continue;
      CHECK(space.index_of(OffsetLabel::start(f)) < space.size());
      CHECK(space.index_of(OffsetLabel::end(f)) < space.size());
    }
  }
}

TEST_CASE("documented label order") {
  const LabelSpace space(2);
  CHECK(space.index_of(OffsetLabel::center()) == 0);
  CHECK(space.index_of(OffsetLabel::out_of_range()) == 1);
  CHECK(space.index_of(OffsetLabel::start(-2)) == 2);
  CHECK(space.index_of(OffsetLabel::start(-1)) == 3);
  CHECK(space.index_of(OffsetLabel::start(1)) == 4);
  CHECK(space.index_of(OffsetLabel::start(2)) == 5);
  CHECK(space.index_of(OffsetLabel::end(-2)) == 6);
  CHECK(space.index_of(OffsetLabel::end(2)) == 9);

  const LabelSpace s1(1);
  const auto index = s1.index_of(OffsetLabel::end(-1));
  CHECK(index >= 2);
  CHECK(index <= 5);
  CHECK(s1.label_at(index) == OffsetLabel::end(-1));
}

TEST_CASE("labels outside the space are rejected") {
  CHECK_THROWS_AS(LabelSpace(1).index_of(OffsetLabel::end(2)), ValidationError);
  CHECK_THROWS_AS(LabelSpace(0).index_of(OffsetLabel::start(-1)), ValidationError);
  CHECK_THROWS_AS(LabelSpace(2).label_at(10), ValidationError);
  CHECK_THROWS_AS(OffsetLabel::start(0), ValidationError);
}

TEST_CASE("label notation") {
  CHECK(OffsetLabel::end(-1).notation() == "-1E");
  CHECK(OffsetLabel::start(2).notation() == "2S");
  CHECK(OffsetLabel::center().notation() == "0");
  CHECK(OffsetLabel::out_of_range().notation() == "×");
}

TEST_CASE("entity mention validation") {
  CHECK_NOTHROW(validate_mention({0, 1, 3}, 5, 1));
  CHECK_NOTHROW(validate_mention({2, 4, 4}, 5, 3));
  CHECK_THROWS_AS(validate_mention({0, 3, 1}, 5, 1), ValidationError);
  CHECK_THROWS_AS(validate_mention({0, 1, 5}, 5, 1), ValidationError);
  CHECK_THROWS_AS(validate_mention({1, 1, 2}, 5, 1), ValidationError);
  CHECK_THROWS_AS(validate_mention({0, -1, 2}, 5, 1), ValidationError);
}

TEST_CASE("sentence and inventory invariants") {
  CHECK_THROWS_AS(Sentence{}.validate(), ValidationError);
  CHECK_THROWS_AS((Sentence{{"a", ""}}.validate()), ValidationError);
  CHECK_NOTHROW((Sentence{{"a", "b"}}.validate()));

  CHECK_THROWS_AS(TypeInventory(std::vector<std::string>{}), ValidationError);
  CHECK_THROWS_AS(TypeInventory({"PER", "PER"}), ValidationError);
  const TypeInventory types({"PER", "ORG"});
  CHECK(types.find("ORG") == 1);
  CHECK_FALSE(types.find("LOC").has_value());
}

TEST_CASE("offset grid bounds") {
  OffsetGrid grid(2, 3, 1);
  CHECK(grid.cells().size() == 18);
  for (auto c : grid.cells()) CHECK(c == LabelSpace::kOutOfRange);
  grid.set(1, 2, 0, 5);
  CHECK(grid.label(1, 2, 0) == OffsetLabel::end(1));
  CHECK_THROWS_AS(grid.set(2, 0, 0, 0), ValidationError);
  CHECK_THROWS_AS(grid.set(0, 0, 0, 6), ValidationError);
}

TEST_CASE("model config validation") {
  ModelConfig config;
  CHECK_NOTHROW(config.validate());
  CHECK(config.label_count() == 10);

  auto broken = config;
  broken.conv_kernel = 4;
  CHECK_THROWS_AS(broken.validate(), ConfigError);
  broken = config;
  broken.conv_dilations = {};
  CHECK_THROWS_AS(broken.validate(), ConfigError);
  broken = config;
  broken.lstm_dropout = 1.0;
  CHECK_THROWS_AS(broken.validate(), ConfigError);
  broken = config;
  broken.max_offset = 0;
  CHECK_NOTHROW(broken.validate());
  CHECK(broken.label_count() == 2);
}
