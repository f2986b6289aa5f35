#pragma once

#include <optional>
#include <span>
#include <vector>

#include "bopn/types.hpp"

namespace bopn {

enum class DecodeMode { CenterOnly, AllLabels, AllLabelsWithRules };

/// A non-entity span's offset toward one entity that shares its other boundary.
struct CandidateOffset {
  Boundary boundary;
  int offset;  // span boundary - entity boundary, never 0
  EntityMention target;
};

/// Reference annotation of a single cell by brute force over every
/// (entity, boundary) pair. Slow; used as the encoder's oracle.
///
/// Ties on |f| prefer Start over End, then negative over positive f.
OffsetLabel nearest_offset_oracle(std::span<const EntityMention> entities, int type,
                                  int start, int end, int max_offset);

/// Builds the M x N x N gold grid. Throws ValidationError on invalid or
/// duplicate mentions.
OffsetGrid encode_grid(std::size_t length, std::span<const EntityMention> entities,
                       std::size_t type_count, int max_offset);

/// Maps one cell and its label to the entity it points at, if that entity
/// lies inside a sentence of `length` tokens.
std::optional<EntityMention> decode_cell(int type, int start, int end,
                                         const OffsetLabel& label, std::size_t length);

/// Rule (i): the entity an offset cell points at is itself predicted Center.
bool rule_center_alignment(const OffsetGrid& grid, int type, int start, int end);

/// Rule (ii): the neighbouring cell one step toward the implied entity carries
/// the same boundary with offset one closer to zero (or is Center when |f| = 1).
bool rule_sequential_order(const OffsetGrid& grid, int type, int start, int end);

EntitySet decode_grid(const OffsetGrid& grid, DecodeMode mode);

/// Entities decoded only from cells holding `label`.
EntitySet decode_label(const OffsetGrid& grid, LabelIndex label);

const char* to_string(DecodeMode mode);
/// Accepts "center", "all", "rules".
std::optional<DecodeMode> parse_decode_mode(std::string_view text);

}  // namespace bopn
