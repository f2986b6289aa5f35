#include "bopn/types.hpp"

#include <algorithm>
#include <cstdlib>
#include <unordered_set>

#include <fmt/format.h>

namespace bopn {

void Sentence::validate() const {
  if (tokens.empty()) throw ValidationError("sentence is empty");
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i].empty())
      throw ValidationError(fmt::format("token {} is an empty string", i));
}

void validate_mention(const EntityMention& mention, std::size_t length,
                      std::size_t type_count) {
  if (mention.type < 0 || static_cast<std::size_t>(mention.type) >= type_count)
    throw ValidationError(fmt::format("entity type {} outside inventory of size {}",
                                      mention.type, type_count));
  if (mention.start < 0)
    throw ValidationError(fmt::format("start {} is negative", mention.start));
  if (mention.start > mention.end)
    throw ValidationError(
        fmt::format("start {} is after end {}", mention.start, mention.end));
  if (static_cast<std::size_t>(mention.end) >= length)
    throw ValidationError(fmt::format("end out of range: {} for sentence of length {}",
                                      mention.end, length));
}

TypeInventory::TypeInventory(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) throw ValidationError("type inventory is empty");
  std::unordered_set<std::string> seen;
  for (const auto& name : names_) {
    if (name.empty()) throw ValidationError("type name is empty");
    if (!seen.insert(name).second)
      throw ValidationError(fmt::format("duplicate type name '{}'", name));
  }
}

const std::string& TypeInventory::name(int type) const {
  if (type < 0 || static_cast<std::size_t>(type) >= names_.size())
    throw ValidationError(fmt::format("type index {} out of range", type));
  return names_[static_cast<std::size_t>(type)];
}

std::optional<int> TypeInventory::find(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<int>(it - names_.begin());
}

OffsetLabel OffsetLabel::start(int offset) {
  if (offset == 0) throw ValidationError("start offset must be non-zero");
  return OffsetLabel(Kind::StartOffset, offset);
}

OffsetLabel OffsetLabel::end(int offset) {
  if (offset == 0) throw ValidationError("end offset must be non-zero");
  return OffsetLabel(Kind::EndOffset, offset);
}

OffsetLabel OffsetLabel::at(Boundary boundary, int offset) {
  return boundary == Boundary::Start ? start(offset) : end(offset);
}

std::string OffsetLabel::notation() const {
  switch (kind_) {
    case Kind::Center:
      return "0";
    case Kind::OutOfRange:
      return "×";
    case Kind::StartOffset:
      return fmt::format("{}S", offset_);
    case Kind::EndOffset:
      return fmt::format("{}E", offset_);
  }
  return "?";
}

LabelSpace::LabelSpace(int max_offset) : max_offset_(max_offset) {
  if (max_offset < 0) throw ValidationError("maximum offset must be >= 0");
  // Indices are stored as 16-bit values.
  if (max_offset > 10000) throw ValidationError("maximum offset too large");
}

LabelIndex LabelSpace::index_of(const OffsetLabel& label) const {
  switch (label.kind()) {
    case OffsetLabel::Kind::Center:
      return kCenter;
    case OffsetLabel::Kind::OutOfRange:
      return kOutOfRange;
    default:
      break;
  }
  const int f = label.offset();
  if (std::abs(f) > max_offset_)
    throw ValidationError(fmt::format("label {} outside label space with S={}",
                                      label.notation(), max_offset_));
  // Position within the 2S block: -S..-1 -> 0..S-1, 1..S -> S..2S-1.
  const int within = f < 0 ? f + max_offset_ : f + max_offset_ - 1;
  const int block = label.kind() == OffsetLabel::Kind::StartOffset ? 0 : 2 * max_offset_;
  return static_cast<LabelIndex>(2 + block + within);
}

OffsetLabel LabelSpace::label_at(LabelIndex index) const {
  if (index >= size())
    throw ValidationError(
        fmt::format("label index {} outside label space of size {}", index, size()));
  if (index == kCenter) return OffsetLabel::center();
  if (index == kOutOfRange) return OffsetLabel::out_of_range();
  int rest = index - 2;
  const bool is_start = rest < 2 * max_offset_;
  if (!is_start) rest -= 2 * max_offset_;
  const int f = rest < max_offset_ ? rest - max_offset_ : rest - max_offset_ + 1;
  return is_start ? OffsetLabel::start(f) : OffsetLabel::end(f);
}

std::vector<OffsetLabel> LabelSpace::enumerate() const {
  std::vector<OffsetLabel> labels;
  labels.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) labels.push_back(label_at(static_cast<LabelIndex>(i)));
  return labels;
}

OffsetGrid::OffsetGrid(std::size_t types, std::size_t length, int max_offset)
    : types_(types),
      length_(length),
      max_offset_(max_offset),
      cells_(types * length * length, LabelSpace::kOutOfRange) {
  LabelSpace{max_offset};
}

void OffsetGrid::set(std::size_t type, std::size_t start, std::size_t end,
                     LabelIndex value) {
  if (type >= types_ || start >= length_ || end >= length_)
    throw ValidationError(fmt::format("cell ({}, {}, {}) outside {}x{}x{} grid", type,
                                      start, end, types_, length_, length_));
  if (value >= label_space().size())
    throw ValidationError(fmt::format("label index {} invalid for S={}", value, max_offset_));
  cells_[offset(type, start, end)] = value;
}

OffsetLabel OffsetGrid::label(std::size_t type, std::size_t start, std::size_t end) const {
  return label_space().label_at(at(type, start, end));
}

void OffsetGrid::assign(std::span<const LabelIndex> cells) {
  if (cells.size() != cells_.size())
    throw ValidationError(fmt::format("grid expects {} cells, got {}", cells_.size(),
                                      cells.size()));
  const auto limit = label_space().size();
  for (auto c : cells)
    if (c >= limit)
      throw ValidationError(fmt::format("label index {} invalid for S={}", c, max_offset_));
  std::copy(cells.begin(), cells.end(), cells_.begin());
}

void ModelConfig::validate() const {
  auto positive = [](int value, const char* name) {
    if (value < 1) throw ConfigError(fmt::format("{} must be >= 1, got {}", name, value));
  };
  auto unit = [](double value, const char* name) {
    if (!(value >= 0.0 && value < 1.0))
      throw ConfigError(fmt::format("{} must lie in [0, 1), got {}", name, value));
  };
  if (max_offset < 0) throw ConfigError("max_offset must be >= 0");
  positive(embedding_dim, "embedding_dim");
  positive(hidden_size, "hidden_size");
  if (hidden_size % 2 != 0)
    throw ConfigError("hidden_size must be even (split across two directions)");
  positive(region_embedding_size, "region_embedding_size");
  positive(biaffine_size, "biaffine_size");
  positive(conv_kernel, "conv_kernel");
  if (conv_kernel % 2 == 0)
    throw ConfigError(fmt::format("conv_kernel must be odd, got {}", conv_kernel));
  if (conv_channels < 0) throw ConfigError("conv_channels must be >= 0");
  if (conv_dilations.empty()) throw ConfigError("conv_dilations must not be empty");
  for (int d : conv_dilations) positive(d, "conv dilation");
  unit(lstm_dropout, "lstm_dropout");
  unit(biaffine_dropout, "biaffine_dropout");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(warm_factor > 0.0 && warm_factor < 1.0))
    throw ConfigError("warm_factor must lie in (0, 1)");
  positive(epochs, "epochs");
  positive(batch_size, "batch_size");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  unit(adam_beta1, "adam_beta1");
  unit(adam_beta2, "adam_beta2");
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
  if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be > 0");
}

}  // namespace bopn
