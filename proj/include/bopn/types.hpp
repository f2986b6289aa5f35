#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bopn {

/// Input that violates a documented contract (bad indices, unknown types, ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hyperparameter or configuration-file problem.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A tokenized sentence. Tokens are taken as given.
struct Sentence {
  std::vector<std::string> tokens;

  std::size_t size() const { return tokens.size(); }
  /// Throws ValidationError when empty or when a token is the empty string.
  void validate() const;
};

/// A typed span with 0-based inclusive token boundaries.
struct EntityMention {
  int type = 0;
  int start = 0;
  int end = 0;

  auto operator<=>(const EntityMention&) const = default;
};

using EntitySet = std::set<EntityMention>;

/// Rejects start > end, end >= length, type >= type_count and negatives.
void validate_mention(const EntityMention& mention, std::size_t length,
                      std::size_t type_count);

/// Ordered, duplicate-free list of entity type names.
class TypeInventory {
 public:
  TypeInventory() = default;
  explicit TypeInventory(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  const std::string& name(int type) const;
  std::optional<int> find(std::string_view name) const;
  const std::vector<std::string>& names() const { return names_; }

  bool operator==(const TypeInventory&) const = default;

 private:
  std::vector<std::string> names_;
};

enum class Boundary : std::uint8_t { Start, End };

/// Annotation of one grid cell: the span is an entity (Center), is `offset`
/// tokens away from one at its start or end boundary, or is out of range.
class OffsetLabel {
 public:
  enum class Kind : std::uint8_t { Center, StartOffset, EndOffset, OutOfRange };

  static OffsetLabel center() { return OffsetLabel(Kind::Center, 0); }
  static OffsetLabel out_of_range() { return OffsetLabel(Kind::OutOfRange, 0); }
  /// Throws ValidationError for offset 0.
  static OffsetLabel start(int offset);
  static OffsetLabel end(int offset);
  static OffsetLabel at(Boundary boundary, int offset);

  Kind kind() const { return kind_; }
  int offset() const { return offset_; }
  bool is_offset() const {
    return kind_ == Kind::StartOffset || kind_ == Kind::EndOffset;
  }
  Boundary boundary() const {
    return kind_ == Kind::StartOffset ? Boundary::Start : Boundary::End;
  }

  /// Notation used in debug dumps: "0", "-1E", "2S", "×".
  std::string notation() const;

  bool operator==(const OffsetLabel&) const = default;

 private:
  OffsetLabel(Kind kind, int offset) : kind_(kind), offset_(offset) {}

  Kind kind_;
  int offset_;
};

using LabelIndex = std::uint16_t;

/// Bijection between the 4S+2 offset labels and [0, L).
///
/// Order (version 1): 0 = Center, 1 = OutOfRange, then StartOffset for
/// f = -S..-1, 1..S, then EndOffset for the same f sequence.
class LabelSpace {
 public:
  static constexpr LabelIndex kCenter = 0;
  static constexpr LabelIndex kOutOfRange = 1;
  static constexpr std::uint32_t kOrderVersion = 1;

  explicit LabelSpace(int max_offset);

  int max_offset() const { return max_offset_; }
  std::size_t size() const { return 4 * static_cast<std::size_t>(max_offset_) + 2; }

  /// Throws ValidationError when |offset| exceeds the maximum.
  LabelIndex index_of(const OffsetLabel& label) const;
  OffsetLabel label_at(LabelIndex index) const;
  std::vector<OffsetLabel> enumerate() const;

 private:
  int max_offset_;
};

/// M x N x N label-index cube. Cells default to OutOfRange.
class OffsetGrid {
 public:
  OffsetGrid() = default;
  OffsetGrid(std::size_t types, std::size_t length, int max_offset);

  std::size_t types() const { return types_; }
  std::size_t length() const { return length_; }
  int max_offset() const { return max_offset_; }
  LabelSpace label_space() const { return LabelSpace(max_offset_); }

  LabelIndex at(std::size_t type, std::size_t start, std::size_t end) const {
    return cells_[offset(type, start, end)];
  }
  void set(std::size_t type, std::size_t start, std::size_t end, LabelIndex value);
  OffsetLabel label(std::size_t type, std::size_t start, std::size_t end) const;

  std::span<const LabelIndex> cells() const { return cells_; }
  /// Replaces every cell; throws when the size or any index is invalid.
  void assign(std::span<const LabelIndex> cells);

  bool operator==(const OffsetGrid&) const = default;

 private:
  std::size_t offset(std::size_t type, std::size_t start, std::size_t end) const {
    return (type * length_ + start) * length_ + end;
  }

  std::size_t types_ = 0;
  std::size_t length_ = 0;
  int max_offset_ = 0;
  std::vector<LabelIndex> cells_;
};

/// Every hyperparameter of the network and its training loop.
/// Defaults follow the reference settings; sizes are desk-scale friendly.
struct ModelConfig {
  int max_offset = 2;
  int embedding_dim = 100;
  int hidden_size = 256;
  int region_embedding_size = 20;
  int biaffine_size = 150;
  std::vector<int> conv_dilations = {1, 2, 3};
  int conv_kernel = 3;
  int conv_channels = 0;  // 0 means one channel per offset label
  double lstm_dropout = 0.5;
  double biaffine_dropout = 0.2;

  double learning_rate = 1e-3;
  double warm_factor = 0.1;
  int epochs = 50;
  int batch_size = 8;
  std::uint64_t seed = 42;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double grad_clip = 5.0;

  bool use_type_inputs = true;
  bool use_region_embedding = true;
  bool use_conv_stack = true;

  std::size_t label_count() const { return 4 * static_cast<std::size_t>(max_offset) + 2; }
  std::size_t conv_width() const {
    return conv_channels > 0 ? static_cast<std::size_t>(conv_channels) : label_count();
  }
  std::size_t span_size() const {
    return static_cast<std::size_t>(hidden_size) +
           (use_region_embedding ? static_cast<std::size_t>(region_embedding_size) : 0);
  }

  /// Throws ConfigError naming the first offending field.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace bopn
