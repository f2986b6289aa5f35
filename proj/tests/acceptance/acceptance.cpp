// Runs the nine acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is nonzero when any criterion fails.

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "bopn/autodiff/grad_check.hpp"
#include "bopn/checkpoint.hpp"
#include "bopn/config_io.hpp"
#include "bopn/data_io.hpp"
#include "bopn/evaluation.hpp"
#include "bopn/model.hpp"
#include "bopn/offset_codec.hpp"
#include "bopn/training.hpp"
#include "support/random_instances.hpp"
#include "support/temp_dir.hpp"

using namespace bopn;
using bopn::testing::corrupt_any;
using bopn::testing::corrupt_with_offsets;
using bopn::testing::Instance;
using bopn::testing::is_subset;
using bopn::testing::random_instance;
using bopn::testing::read_text;
using bopn::testing::TempDir;

namespace fs = std::filesystem;

namespace {

const fs::path kSourceDir = BOPN_SOURCE_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Nearest-offset annotation computed from the definition alone: the cell is
// the entity itself, or shares exactly one boundary with an entity of its
// type and sits |f| <= S away from the other one. Ties prefer the start
// boundary, then the negative offset.
OffsetLabel brute_force_label(const std::vector<EntityMention>& entities, int type, int i, int j,
                              int s) {
  for (const auto& e : entities)
    if (e.type == type && e.start == i && e.end == j) return OffsetLabel::center();
  struct Candidate {
    int distance;
    int boundary_rank;  // 0 start, 1 end
    int sign_rank;      // 0 negative, 1 positive
    int offset;
  };
  std::vector<Candidate> candidates;
  for (const auto& e : entities) {
    if (e.type != type) continue;
    if (e.end == j) {
      const int f = i - e.start;
      if (f != 0 && std::abs(f) <= s) candidates.push_back({std::abs(f), 0, f < 0 ? 0 : 1, f});
    }
    if (e.start == i) {
      const int f = j - e.end;
      if (f != 0 && std::abs(f) <= s) candidates.push_back({std::abs(f), 1, f < 0 ? 0 : 1, f});
    }
  }
  if (candidates.empty()) return OffsetLabel::out_of_range();
  const auto best = *std::min_element(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    return std::tie(a.distance, a.boundary_rank, a.sign_rank) <
           std::tie(b.distance, b.boundary_rank, b.sign_rank);
  });
  return best.boundary_rank == 0 ? OffsetLabel::start(best.offset) : OffsetLabel::end(best.offset);
}

std::vector<Instance> instances(std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::vector<Instance> out;
  for (int k = 0; k < count; ++k) out.push_back(random_instance(rng));
  return out;
}

EntitySet gold_set(const Instance& inst) { return {inst.entities.begin(), inst.entities.end()}; }

OffsetGrid random_grid(const Instance& inst, std::mt19937_64& rng) {
  OffsetGrid grid(inst.types, inst.length, inst.max_offset);
  std::uniform_int_distribution<int> label(0, static_cast<int>(grid.label_space().size()) - 1);
  for (std::size_t m = 0; m < inst.types; ++m)
    for (std::size_t i = 0; i < inst.length; ++i)
      for (std::size_t j = 0; j < inst.length; ++j) grid.set(m, i, j, static_cast<LabelIndex>(label(rng)));
  return grid;
}

// ---------------------------------------------------------------- 1

Outcome label_space_law() {
  for (int s = 0; s <= 5; ++s) {
    const LabelSpace space(s);
    const auto labels = space.enumerate();
    std::set<std::string> distinct;
    for (const auto& l : labels) distinct.insert(l.notation());
    const std::size_t expected = 4 * static_cast<std::size_t>(s) + 2;
    if (labels.size() != expected || distinct.size() != expected || space.size() != expected)
      return {false, fmt::format("S={}: {} labels, {} distinct, expected {}", s, labels.size(),
                                 distinct.size(), expected)};
    for (std::size_t k = 0; k < labels.size(); ++k)
      if (space.index_of(labels[k]) != k) return {false, fmt::format("S={}: index {} does not roundtrip", s, k)};
  }
  return {true, "S = 0..5 give 2, 6, 10, 14, 18, 22 labels"};
}

// ---------------------------------------------------------------- 2

Outcome oracle_equivalence() {
  std::size_t cells = 0;
  for (const auto& inst : instances(2024, 1000)) {
    const auto grid = encode_grid(inst.length, inst.entities, inst.types, inst.max_offset);
    const auto space = grid.label_space();
    for (std::size_t m = 0; m < inst.types; ++m)
      for (std::size_t i = 0; i < inst.length; ++i)
        for (std::size_t j = 0; j < inst.length; ++j, ++cells) {
          const auto expected = brute_force_label(inst.entities, static_cast<int>(m), static_cast<int>(i),
                                                  static_cast<int>(j), inst.max_offset);
          if (space.label_at(grid.at(m, i, j)) != expected)
            return {false, fmt::format("cell ({},{},{}) is {} but the oracle gives {}", m, i, j,
                                       space.label_at(grid.at(m, i, j)).notation(), expected.notation())};
        }
  }
  return {true, fmt::format("1000 instances, {} cells identical", cells)};
}

// ---------------------------------------------------------------- 3

Outcome codec_roundtrip() {
  for (const auto& inst : instances(2024, 1000)) {
    const auto grid = encode_grid(inst.length, inst.entities, inst.types, inst.max_offset);
    for (auto mode : {DecodeMode::CenterOnly, DecodeMode::AllLabels, DecodeMode::AllLabelsWithRules})
      if (decode_grid(grid, mode) != gold_set(inst))
        return {false, fmt::format("{} decoding lost or added entities", to_string(mode))};
  }
  return {true, "1000 instances x 3 modes"};
}

// ---------------------------------------------------------------- 4

Outcome decode_inclusions() {
  std::mt19937_64 rng(404);
  const auto pool = instances(4040, 1100);
  std::vector<EntitySet> gold, center, all;
  for (std::size_t k = 0; k < pool.size(); ++k) {
    const auto& inst = pool[k];
    const auto grid = k < 1000 ? random_grid(inst, rng)
                               : corrupt_any(encode_grid(inst.length, inst.entities, inst.types, inst.max_offset),
                                             1 + static_cast<int>(k % 8), rng);
    const auto c = decode_grid(grid, DecodeMode::CenterOnly);
    const auto r = decode_grid(grid, DecodeMode::AllLabelsWithRules);
    const auto a = decode_grid(grid, DecodeMode::AllLabels);
    if (!is_subset(c, r)) return {false, fmt::format("grid {}: center output not inside rules output", k)};
    if (!is_subset(r, a)) return {false, fmt::format("grid {}: rules output not inside all output", k)};
    gold.push_back(gold_set(inst));
    center.push_back(c);
    all.push_back(a);
  }
  const double rc = strict_prf(gold, center).recall;
  const double ra = strict_prf(gold, all).recall;
  if (ra < rc) return {false, fmt::format("recall all {:.4f} < center {:.4f}", ra, rc)};
  return {true, fmt::format("1000 random + 100 corrupted grids; recall all {:.4f} >= center {:.4f}", ra, rc)};
}

// ---------------------------------------------------------------- 5

Outcome rule_effectiveness() {
  std::mt19937_64 rng(505);
  int wins = 0;
  int strict = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    Instance inst;
    do inst = random_instance(rng);
    while (inst.entities.empty() || inst.length < 4);
    const auto gold = encode_grid(inst.length, inst.entities, inst.types, inst.max_offset);
    const int flips = 1 + t % 6;
    const auto noisy = corrupt_with_offsets(gold, flips, rng);
    const std::vector<EntitySet> truth = {gold_set(inst)};
    const std::vector<EntitySet> all = {decode_grid(noisy, DecodeMode::AllLabels)};
    const std::vector<EntitySet> rules = {decode_grid(noisy, DecodeMode::AllLabelsWithRules)};
    const double pa = strict_prf(truth, all).precision;
    const double pr = strict_prf(truth, rules).precision;
    if (pr >= pa) ++wins;
    if (pr > pa) ++strict;
  }
  const double rate = static_cast<double>(wins) / trials;
  return {rate >= 0.95, fmt::format("precision(rules) >= precision(all) in {}/{} trials ({:.1f}%), strictly "
                                    "higher in {}",
                                    wins, trials, 100 * rate, strict)};
}

// ---------------------------------------------------------------- 6

Outcome gradient_checks() {
  double worst = 0.0;
  std::string worst_name;
  std::size_t runs = 0;
  auto record = [&](const std::string& name, const ad::GradCheckResult& r) {
    ++runs;
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      worst_name = name;
    }
  };
  const auto suite = ad::kernel_check_suite();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (const auto& k : suite) record(fmt::format("{} seed {}", k.name, seed), k.run(seed));
    record(fmt::format("model seed {}", seed), model_grad_check(seed, 0.01, true));
    record(fmt::format("model_reduced seed {}", seed), model_grad_check(seed, 0.01, false));
  }
  return {worst < 1e-4, fmt::format("{} kernels + model over 5 seeds ({} checks); worst {:.3e} ({})",
                                    suite.size(), runs, worst, worst_name)};
}

// ---------------------------------------------------------------- 7

TrainingData overfit_data(const RunConfig& run) {
  TrainingData data;
  data.train = read_corpus(kSourceDir / run.data.train);
  data.dev = read_corpus(kSourceDir / run.data.dev, data.train.types);
  return data;
}

Outcome overfit_sanity() {
  const auto run = load_config_file(kSourceDir / "configs" / "overfit.ini");
  if (run.model.max_offset != 2 || run.model.epochs > 300)
    return {false, "configs/overfit.ini must use S = 2 and at most 300 epochs"};
  const auto data = overfit_data(run);
  bool nested = false;
  for (const auto& d : data.train.documents)
    for (const auto& a : d.entities)
      for (const auto& b : d.entities)
        if (!(a == b) && a.start <= b.start && b.end <= a.end) nested = true;
  if (data.train.documents.size() != 16 || !nested)
    return {false, "overfit corpus must hold 16 sentences with nested entities"};

  int first_perfect = 0;
  TrainOptions options;
  options.on_epoch = [&](const EpochMetrics& m) {
    if (first_perfect == 0 && m.dev.center_only.f1 == 1.0) first_perfect = m.epoch;
  };
  const auto result = train(data, run.model, options);

  // The final model, decoded with CenterOnly, must reproduce the gold sets.
  const auto inputs = make_inputs(data.train, result.vocabulary);
  std::vector<EntitySet> predicted;
  for (const auto& g : predict_grids(*result.model, inputs))
    predicted.push_back(decode_grid(g, DecodeMode::CenterOnly));
  const double final_f1 = strict_prf(data.train.entity_sets(), predicted).f1;
  return {first_perfect > 0 && final_f1 == 1.0,
          fmt::format("center F1 first 1.0 at epoch {}, final {:.4f} after {} epochs", first_perfect, final_f1,
                      result.epochs.size())};
}

// ---------------------------------------------------------------- 8

Outcome ablation_plumbing() {
  TempDir dir;
  const std::vector<std::string> names = {"ablation_no_offsets", "ablation_no_conv", "ablation_no_type_inputs",
                                          "ablation_no_region"};
  std::set<std::string> logs;
  std::string summary;
  for (const auto& name : names) {
    const auto run = load_config_file(kSourceDir / "configs" / (name + ".ini"));
    TrainOptions options;
    options.output_dir = dir / name;
    options.data_paths = run.data;
    const auto result = train(overfit_data(run), run.model, options);
    const auto status = read_text(dir / name / "status.json");
    if (status.find("\"complete\"") == std::string::npos ||
        result.epochs.size() != static_cast<std::size_t>(run.model.epochs))
      return {false, name + " did not train to completion"};
    logs.insert(read_text(dir / name / "metrics.jsonl"));
    summary += fmt::format("{}{} F1 {:.3f}", summary.empty() ? "" : ", ", name.substr(9),
                           result.epochs.back().dev.center_only.f1);
  }
  if (logs.size() != names.size()) return {false, "two ablations produced identical metrics logs"};
  return {true, "4 runs complete with distinct logs: " + summary};
}

// ---------------------------------------------------------------- 9

Outcome determinism() {
  auto run = load_config_file(kSourceDir / "configs" / "overfit.ini");
  run.model.epochs = 5;
  const auto data = overfit_data(run);
  TempDir dir;
  std::vector<std::vector<double>> losses;
  std::vector<std::string> predictions;
  for (int k = 0; k < 2; ++k) {
    TrainOptions options;
    options.output_dir = dir / fmt::format("run{}", k);
    const auto result = train(data, run.model, options);
    std::vector<double> l;
    for (const auto& e : result.epochs) l.push_back(e.train_loss);
    losses.push_back(l);

    const auto loaded = load_checkpoint(dir / fmt::format("run{}", k) / "model.ckpt");
    const auto inputs = make_inputs(data.dev, loaded.vocabulary);
    std::vector<EntitySet> sets;
    for (const auto& g : predict_grids(*loaded.model, inputs))
      sets.push_back(decode_grid(g, DecodeMode::AllLabelsWithRules));
    const auto file = dir / fmt::format("pred{}.jsonl", k);
    write_predictions(file, data.dev, sets);
    predictions.push_back(read_text(file));
  }
  const bool same_losses = losses[0].size() == 5 && losses[1].size() == 5 &&
                           std::memcmp(losses[0].data(), losses[1].data(), 5 * sizeof(double)) == 0;
  const bool same_predictions = predictions[0] == predictions[1] && !predictions[0].empty();
  return {same_losses && same_predictions,
          fmt::format("5-epoch losses {}, prediction files {}", same_losses ? "bitwise equal" : "differ",
                      same_predictions ? "identical" : "differ")};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "label-space law", 1, label_space_law},
      {2, "oracle equivalence", 10, oracle_equivalence},
      {3, "codec roundtrip", 10, codec_roundtrip},
      {4, "decode-mode inclusions", 10, decode_inclusions},
      {5, "rule effectiveness", 30, rule_effectiveness},
      {6, "gradient checks", 120, gradient_checks},
      {7, "overfit sanity", 300, overfit_sanity},
      {8, "ablation plumbing", 1200, ablation_plumbing},
      {9, "determinism", 300, determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = seconds < c.limit_seconds;
    const bool pass = outcome.pass && in_time;
    if (!pass) ++failures;
    std::cout << fmt::format("{} [{}] {}: {} ({:.2f} s, limit {:g} s{})", pass ? "PASS" : "FAIL", c.id, c.name,
                             outcome.detail, seconds, c.limit_seconds, in_time ? "" : ", over time")
              << std::endl;
  }
  std::cout << fmt::format("{} of {} criteria passed", criteria.size() - static_cast<std::size_t>(failures),
                           criteria.size())
            << std::endl;
  return failures == 0 ? 0 : 1;
}
