#include "bopn/evaluation.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace bopn {

PRFScore PRFScore::from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  PRFScore s;
  s.tp = tp;
  s.fp = fp;
  s.fn = fn;
  s.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  s.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  s.f1 = s.precision + s.recall == 0.0
             ? 0.0
             : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

namespace {

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;

  void add(const EntitySet& gold, const EntitySet& pred) {
    std::size_t hit = 0;
    for (const auto& e : pred) hit += gold.contains(e) ? 1 : 0;
    tp += hit;
    fp += pred.size() - hit;
    fn += gold.size() - hit;
  }
  PRFScore score() const { return PRFScore::from_counts(tp, fp, fn); }
};

void check_grids(std::span<const OffsetGrid> gold, std::span<const OffsetGrid> pred) {
  if (gold.size() != pred.size())
    throw ValidationError(
        fmt::format("{} gold grids but {} predicted grids", gold.size(), pred.size()));
  for (std::size_t k = 0; k < gold.size(); ++k) {
    const auto& g = gold[k];
    const auto& p = pred[k];
    if (g.max_offset() != p.max_offset())
      throw ValidationError(fmt::format("sentence {}: gold grid has S = {}, prediction has S = {}",
                                        k, g.max_offset(), p.max_offset()));
    if (g.types() != p.types() || g.length() != p.length())
      throw ValidationError(fmt::format("sentence {}: grid dimensions differ", k));
  }
}

}  // namespace

PRFScore strict_prf(std::span<const EntitySet> gold, std::span<const EntitySet> pred) {
  if (gold.size() != pred.size())
    throw ValidationError(
        fmt::format("{} gold sentences but {} predicted sentences", gold.size(), pred.size()));
  Counts c;
  for (std::size_t k = 0; k < gold.size(); ++k) c.add(gold[k], pred[k]);
  return c.score();
}

PerLabelReport per_label_report(std::span<const OffsetGrid> gold, std::span<const OffsetGrid> pred) {
  check_grids(gold, pred);
  PerLabelReport report;
  if (gold.empty()) return report;
  report.max_offset = gold.front().max_offset();
  for (const auto& g : gold)
    if (g.max_offset() != report.max_offset)
      throw ValidationError("gold grids mix different maximum offsets");

  const LabelSpace space(report.max_offset);
  std::vector<LabelIndex> order;
  for (std::size_t k = 2; k < space.size(); ++k) order.push_back(static_cast<LabelIndex>(k));
  order.push_back(LabelSpace::kCenter);

  for (LabelIndex label : order) {
    Counts c;
    std::size_t support = 0;
    for (std::size_t k = 0; k < gold.size(); ++k) {
      const auto reference = decode_label(gold[k], label);
      support += reference.size();
      c.add(reference, decode_label(pred[k], label));
    }
    report.labels.push_back({space.label_at(label).notation(), c.score(), support});
  }

  std::size_t total = 0;
  Counts center, all, rules;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    const auto entities = decode_grid(gold[k], DecodeMode::CenterOnly);
    total += entities.size();
    center.add(entities, decode_grid(pred[k], DecodeMode::CenterOnly));
    all.add(entities, decode_grid(pred[k], DecodeMode::AllLabels));
    rules.add(entities, decode_grid(pred[k], DecodeMode::AllLabelsWithRules));
  }
  report.center_only = {"0", center.score(), total};
  report.all_labels = {"ALL", all.score(), total};
  report.with_rules = {"- w/ rules", rules.score(), total};
  return report;
}

const PRFScore& ModeScores::operator[](DecodeMode mode) const {
  switch (mode) {
    case DecodeMode::CenterOnly: return center_only;
    case DecodeMode::AllLabels: return all_labels;
    case DecodeMode::AllLabelsWithRules: return with_rules;
  }
  return with_rules;
}

ModeScores score_decode_modes(std::span<const EntitySet> gold, std::span<const OffsetGrid> pred) {
  if (gold.size() != pred.size())
    throw ValidationError(
        fmt::format("{} gold sentences but {} predicted grids", gold.size(), pred.size()));
  Counts center, all, rules;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    center.add(gold[k], decode_grid(pred[k], DecodeMode::CenterOnly));
    all.add(gold[k], decode_grid(pred[k], DecodeMode::AllLabels));
    rules.add(gold[k], decode_grid(pred[k], DecodeMode::AllLabelsWithRules));
  }
  return {center.score(), all.score(), rules.score()};
}

nlohmann::ordered_json to_json(const PRFScore& score) {
  return {{"precision", score.precision}, {"recall", score.recall}, {"f1", score.f1},
          {"tp", score.tp},               {"fp", score.fp},         {"fn", score.fn}};
}

namespace {

nlohmann::ordered_json row_json(const ReportRow& row) {
  auto j = to_json(row.score);
  j["label"] = row.label;
  j["support"] = row.support;
  return j;
}

std::string table_line(const std::string& label, const PRFScore& s, std::size_t support) {
  return fmt::format("{:<12}{:>8.2f}{:>8.2f}{:>8.2f}{:>10}\n", label, 100 * s.precision,
                     100 * s.recall, 100 * s.f1, support);
}

std::string table_header() {
  return fmt::format("{:<12}{:>8}{:>8}{:>8}{:>10}\n", "Label", "P", "R", "F1", "Support");
}

}  // namespace

nlohmann::ordered_json to_json(const PerLabelReport& report) {
  nlohmann::ordered_json labels = nlohmann::ordered_json::array();
  for (const auto& row : report.labels) labels.push_back(row_json(row));
  return {{"max_offset", report.max_offset},
          {"labels", labels},
          {"center_only", row_json(report.center_only)},
          {"all_labels", row_json(report.all_labels)},
          {"with_rules", row_json(report.with_rules)}};
}

std::string to_table(const PerLabelReport& report) {
  std::string out = table_header();
  const std::string rule(46, '-');
  const std::size_t per_side = static_cast<std::size_t>(2 * report.max_offset);
  for (std::size_t k = 0; k < report.labels.size(); ++k) {
    if (per_side > 0 && k > 0 && k % per_side == 0) out += rule + "\n";
    const auto& row = report.labels[k];
    out += table_line(row.label, row.score, row.support);
  }
  out += rule + "\n";
  out += table_line(report.all_labels.label, report.all_labels.score, report.all_labels.support);
  out += table_line(report.with_rules.label, report.with_rules.score, report.with_rules.support);
  return out;
}

std::string to_table(const PRFScore& score, std::size_t support) {
  return table_header() + table_line("strict", score, support);
}

}  // namespace bopn
