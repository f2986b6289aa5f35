#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bopn/offset_codec.hpp"
#include "bopn/types.hpp"

namespace bopn {

struct PRFScore {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  /// Zero for every empty denominator.
  static PRFScore from_counts(std::size_t tp, std::size_t fp, std::size_t fn);
};

/// Micro-averaged exact (type, start, end) matching across sentences.
/// Throws ValidationError when the lists differ in length.
PRFScore strict_prf(std::span<const EntitySet> gold, std::span<const EntitySet> pred);

struct ReportRow {
  std::string label;
  PRFScore score;
  std::size_t support = 0;
};

struct PerLabelReport {
  int max_offset = 0;
  /// Start offsets -S..S, end offsets -S..S, then the center label.
  std::vector<ReportRow> labels;
  ReportRow center_only;
  ReportRow all_labels;
  ReportRow with_rules;
};

/// For each label: decoded entities of cells predicted with that label
/// against gold entities that own at least one gold cell with that label.
/// Aggregate rows decode whole grids against all gold entities.
/// Throws ValidationError when grids disagree in count, types, length or S.
PerLabelReport per_label_report(std::span<const OffsetGrid> gold, std::span<const OffsetGrid> pred);

/// Strict scores of the three decode modes against gold entity sets.
struct ModeScores {
  PRFScore center_only;
  PRFScore all_labels;
  PRFScore with_rules;

  const PRFScore& operator[](DecodeMode mode) const;
};
ModeScores score_decode_modes(std::span<const EntitySet> gold, std::span<const OffsetGrid> pred);

nlohmann::ordered_json to_json(const PRFScore& score);
nlohmann::ordered_json to_json(const PerLabelReport& report);
/// Aligned table with columns Label, P, R, F1, Support.
std::string to_table(const PerLabelReport& report);
std::string to_table(const PRFScore& score, std::size_t support);

}  // namespace bopn
