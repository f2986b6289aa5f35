#include "bopn/offset_codec.hpp"

#include <cstdlib>
#include <tuple>

#include <fmt/format.h>

namespace bopn {
namespace {

// Lexicographic preference among candidates: smaller |f|, Start before End,
// negative before positive.
std::tuple<int, int, int> preference(Boundary boundary, int offset) {
  return {std::abs(offset), boundary == Boundary::Start ? 0 : 1, offset < 0 ? 0 : 1};
}

}  // namespace

OffsetLabel nearest_offset_oracle(std::span<const EntityMention> entities, int type,
                                  int start, int end, int max_offset) {
  for (const auto& e : entities)
    if (e.type == type && e.start == start && e.end == end) return OffsetLabel::center();

  std::vector<CandidateOffset> candidates;
  for (const auto& e : entities) {
    if (e.type != type) continue;
    if (e.end == end && e.start != start)
      candidates.push_back({Boundary::Start, start - e.start, e});
    if (e.start == start && e.end != end)
      candidates.push_back({Boundary::End, end - e.end, e});
  }
  if (candidates.empty()) return OffsetLabel::out_of_range();

  const CandidateOffset* best = &candidates.front();
  for (const auto& c : candidates)
    if (preference(c.boundary, c.offset) < preference(best->boundary, best->offset))
      best = &c;
  if (std::abs(best->offset) > max_offset) return OffsetLabel::out_of_range();
  return OffsetLabel::at(best->boundary, best->offset);
}

OffsetGrid encode_grid(std::size_t length, std::span<const EntityMention> entities,
                       std::size_t type_count, int max_offset) {
  OffsetGrid grid(type_count, length, max_offset);
  const LabelSpace space(max_offset);
  const EntitySet unique(entities.begin(), entities.end());
  if (unique.size() != entities.size()) throw ValidationError("duplicate entity mention");
  for (const auto& e : entities) validate_mention(e, length, type_count);

  for (const auto& e : entities) grid.set(e.type, e.start, e.end, LabelSpace::kCenter);

  // Paint every in-range offset cell around each entity, keeping the
  // preferred label where two entities reach the same cell.
  const auto n = static_cast<int>(length);
  const auto better = [&](std::size_t m, int i, int j, Boundary boundary, int f) {
    const auto current = grid.label(m, i, j);
    if (current.kind() == OffsetLabel::Kind::Center) return false;
    if (current.kind() == OffsetLabel::Kind::OutOfRange) return true;
    return preference(boundary, f) < preference(current.boundary(), current.offset());
  };
  for (const auto& e : entities) {
    const auto m = static_cast<std::size_t>(e.type);
    for (int f = -max_offset; f <= max_offset; ++f) {
      if (f == 0) continue;
      const int i = e.start + f;
      if (i >= 0 && i < n && better(m, i, e.end, Boundary::Start, f))
        grid.set(m, i, e.end, space.index_of(OffsetLabel::start(f)));
      const int j = e.end + f;
      if (j >= 0 && j < n && better(m, e.start, j, Boundary::End, f))
        grid.set(m, e.start, j, space.index_of(OffsetLabel::end(f)));
    }
  }
  return grid;
}

std::optional<EntityMention> decode_cell(int type, int start, int end,
                                         const OffsetLabel& label, std::size_t length) {
  EntityMention mention{type, start, end};
  switch (label.kind()) {
    case OffsetLabel::Kind::OutOfRange:
      return std::nullopt;
    case OffsetLabel::Kind::Center:
      break;
    case OffsetLabel::Kind::StartOffset:
      mention.start = start - label.offset();
      break;
    case OffsetLabel::Kind::EndOffset:
      mention.end = end - label.offset();
      break;
  }
  if (mention.start < 0 || mention.start > mention.end ||
      static_cast<std::size_t>(mention.end) >= length)
    return std::nullopt;
  return mention;
}

bool rule_center_alignment(const OffsetGrid& grid, int type, int start, int end) {
  const auto label = grid.label(type, start, end);
  const auto target = decode_cell(type, start, end, label, grid.length());
  if (!target) return false;
  return grid.at(type, target->start, target->end) == LabelSpace::kCenter;
}

bool rule_sequential_order(const OffsetGrid& grid, int type, int start, int end) {
  const auto label = grid.label(type, start, end);
  if (!label.is_offset()) return label.kind() == OffsetLabel::Kind::Center;
  const int f = label.offset();
  const int step = f > 0 ? 1 : -1;
  int i = start;
  int j = end;
  if (label.boundary() == Boundary::Start)
    i -= step;
  else
    j -= step;
  if (i < 0 || j < 0 || static_cast<std::size_t>(i) >= grid.length() ||
      static_cast<std::size_t>(j) >= grid.length())
    return false;
  const auto neighbour = grid.label(type, i, j);
  if (f == step) return neighbour.kind() == OffsetLabel::Kind::Center;
  return neighbour == OffsetLabel::at(label.boundary(), f - step);
}

EntitySet decode_grid(const OffsetGrid& grid, DecodeMode mode) {
  EntitySet result;
  const int n = static_cast<int>(grid.length());
  for (int m = 0; m < static_cast<int>(grid.types()); ++m)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const auto index = grid.at(m, i, j);
        if (index == LabelSpace::kOutOfRange) continue;
        if (index != LabelSpace::kCenter) {
          if (mode == DecodeMode::CenterOnly) continue;
          if (mode == DecodeMode::AllLabelsWithRules &&
              !(rule_center_alignment(grid, m, i, j) && rule_sequential_order(grid, m, i, j)))
            continue;
        }
        if (auto e = decode_cell(m, i, j, grid.label_space().label_at(index), grid.length()))
          result.insert(*e);
      }
  return result;
}

EntitySet decode_label(const OffsetGrid& grid, LabelIndex label) {
  EntitySet result;
  const auto decoded_label = grid.label_space().label_at(label);
  const int n = static_cast<int>(grid.length());
  for (int m = 0; m < static_cast<int>(grid.types()); ++m)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (grid.at(m, i, j) == label)
          if (auto e = decode_cell(m, i, j, decoded_label, grid.length())) result.insert(*e);
  return result;
}

const char* to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::CenterOnly:
      return "center";
    case DecodeMode::AllLabels:
      return "all";
    case DecodeMode::AllLabelsWithRules:
      return "rules";
  }
  return "?";
}

std::optional<DecodeMode> parse_decode_mode(std::string_view text) {
  if (text == "center") return DecodeMode::CenterOnly;
  if (text == "all") return DecodeMode::AllLabels;
  if (text == "rules") return DecodeMode::AllLabelsWithRules;
  return std::nullopt;
}

}  // namespace bopn
