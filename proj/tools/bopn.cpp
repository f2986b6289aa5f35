#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bopn/autodiff/grad_check.hpp"
#include "bopn/checkpoint.hpp"
#include "bopn/config_io.hpp"
#include "bopn/data_io.hpp"
#include "bopn/evaluation.hpp"
#include "bopn/offset_codec.hpp"
#include "bopn/training.hpp"

namespace fs = std::filesystem;
using namespace bopn;

namespace {

constexpr double kGradTolerance = 1e-4;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    if (first != std::string::npos) out.push_back(item.substr(first, last - first + 1));
  }
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

// ---------------------------------------------------------------- encode

struct EncodeArgs {
  fs::path input;
  int max_offset = 2;
  std::string types;
  fs::path output;
  fs::path debug_json;
};

int run_encode(const EncodeArgs& a) {
  std::optional<TypeInventory> fixed;
  if (!a.types.empty()) fixed = TypeInventory(split_list(a.types));
  if (a.max_offset < 0) throw ConfigError("--max-offset must be at least 0");
  const auto corpus = read_corpus(a.input, fixed);
  std::vector<OffsetGrid> grids;
  grids.reserve(corpus.documents.size());
  for (const auto& d : corpus.documents)
    grids.push_back(encode_grid(d.sentence.size(), d.entities, corpus.types.size(), a.max_offset));
  ensure_parent(a.output);
  write_grids(a.output, grids);
  if (!a.debug_json.empty()) {
    ensure_parent(a.debug_json);
    write_file(a.debug_json, grids_debug_json(corpus, grids).dump(1) + "\n");
  }
  spdlog::info("encoded {} sentences with S = {} and types [{}]", grids.size(), a.max_offset,
               fmt::join(corpus.types.names(), ", "));
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  fs::path config;
  fs::path train;
  fs::path dev;
  fs::path out;
  fs::path train_embeddings;
  fs::path dev_embeddings;
  fs::path train_grids;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
};

int run_train(const TrainArgs& a) {
  RunConfig run = a.config.empty() ? RunConfig{} : load_config_file(a.config);
  auto pick = [](const fs::path& flag, fs::path& configured) {
    if (!flag.empty()) configured = flag;
  };
  pick(a.train, run.data.train);
  pick(a.dev, run.data.dev);
  pick(a.train_embeddings, run.data.train_embeddings);
  pick(a.dev_embeddings, run.data.dev_embeddings);
  pick(a.train_grids, run.data.train_grids);
  if (a.seed) run.model.seed = *a.seed;
  if (a.epochs) run.model.epochs = *a.epochs;
  run.model.validate();
  if (run.data.train.empty()) throw ConfigError("no training corpus; pass --train or set [data] train");
  if (run.data.dev.empty()) throw ConfigError("no dev corpus; pass --dev or set [data] dev");

  TrainingData data;
  data.train = read_corpus(run.data.train);
  data.dev = read_corpus(run.data.dev, data.train.types);
  if (!run.data.train_embeddings.empty())
    data.train_embeddings = read_embeddings(run.data.train_embeddings, data.train.lengths());
  if (!run.data.dev_embeddings.empty())
    data.dev_embeddings = read_embeddings(run.data.dev_embeddings, data.dev.lengths());
  if (!run.data.train_grids.empty()) data.train_grids = read_grids(run.data.train_grids);

  TrainOptions options;
  options.output_dir = a.out;
  options.data_paths = run.data;
  const auto result = train(data, run.model, options);
  spdlog::info("best dev F1 {:.4f} at epoch {}; checkpoint in {}", result.best_dev_f1,
               result.best_epoch, (a.out / "model.ckpt").string());
  return 0;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
  fs::path model;
  fs::path input;
  fs::path output;
  std::string mode = "rules";
  fs::path embeddings;
  fs::path grids_output;
};

int run_predict(const PredictArgs& a) {
  const auto mode = parse_decode_mode(a.mode);
  if (!mode) throw ConfigError("unknown --mode '" + a.mode + "'; expected center, all or rules");
  const auto checkpoint = load_checkpoint(a.model);
  const auto corpus = read_corpus(a.input, checkpoint.types);

  std::optional<EmbeddingFile> embeddings;
  if (checkpoint.feature_dim > 0) {
    if (a.embeddings.empty())
      throw ConfigError(fmt::format("the model was trained on precomputed embeddings of width {}; "
                                    "pass --embeddings", checkpoint.feature_dim));
    embeddings = read_embeddings(a.embeddings, corpus.lengths());
    if (embeddings->dim != checkpoint.feature_dim)
      throw ValidationError(fmt::format("embedding width {} but the model expects {}", embeddings->dim,
                                        checkpoint.feature_dim));
  } else if (!a.embeddings.empty()) {
    throw ConfigError("the model uses its own token table; --embeddings does not apply");
  }

  const auto inputs = make_inputs(corpus, checkpoint.vocabulary, embeddings ? &*embeddings : nullptr);
  const auto grids = predict_grids(*checkpoint.model, inputs);
  std::vector<EntitySet> predictions;
  predictions.reserve(grids.size());
  for (const auto& g : grids) predictions.push_back(decode_grid(g, *mode));

  ensure_parent(a.output);
  write_predictions(a.output, corpus, predictions);
  RunConfig echo{checkpoint.model->config(), {}};
  write_file(a.output.string() + ".config.ini", render_config(echo));
  if (!a.grids_output.empty()) {
    ensure_parent(a.grids_output);
    write_grids(a.grids_output, grids);
  }
  spdlog::info("wrote {} predictions ({} decoding) to {}", predictions.size(), to_string(*mode),
               a.output.string());
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  fs::path gold;
  fs::path pred;
  bool per_label = false;
  fs::path gold_grids;
  fs::path pred_grids;
  fs::path json;
};

int run_eval(const EvalArgs& a) {
  // Both files are read against the union of their types so a predicted
  // type absent from the gold file counts as a false positive.
  auto names = read_corpus(a.gold).types.names();
  const auto pred_types = read_corpus(a.pred).types;
  for (const auto& n : pred_types.names())
    if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
  std::sort(names.begin(), names.end());
  const TypeInventory types(names);
  const auto gold = read_corpus(a.gold, types);
  const auto pred = read_corpus(a.pred, types);
  if (gold.documents.size() != pred.documents.size())
    throw ValidationError(fmt::format("{} gold sentences but {} predicted", gold.documents.size(),
                                      pred.documents.size()));
  for (std::size_t k = 0; k < gold.documents.size(); ++k)
    if (gold.documents[k].sentence.tokens != pred.documents[k].sentence.tokens)
      throw ValidationError(fmt::format("sentence {} has different tokens in gold and predictions", k + 1));

  const auto gold_sets = gold.entity_sets();
  const auto score = strict_prf(gold_sets, pred.entity_sets());
  std::size_t support = 0;
  for (const auto& s : gold_sets) support += s.size();

  nlohmann::ordered_json report = {{"overall", to_json(score)}, {"support", support}};
  std::cout << to_table(score, support);

  if (a.per_label) {
    if (a.gold_grids.empty() || a.pred_grids.empty())
      throw ConfigError("--per-label needs --gold-grids and --pred-grids");
    const auto gold_grids = read_grids(a.gold_grids);
    const auto pred_grids = read_grids(a.pred_grids);
    if (gold_grids.size() != gold.documents.size())
      throw ValidationError(fmt::format("{} gold grids for {} gold sentences", gold_grids.size(),
                                        gold.documents.size()));
    const auto per_label = per_label_report(gold_grids, pred_grids);
    std::cout << '\n' << to_table(per_label);
    report["per_label"] = to_json(per_label);
  }
  if (!a.json.empty()) {
    ensure_parent(a.json);
    write_file(a.json, report.dump(2) + "\n");
  }
  return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::uint64_t seed = 1;
  std::string ops;
  double model_sample_fraction = 0.01;
};

int run_gradcheck(const GradcheckArgs& a) {
  struct Entry {
    std::string name;
    std::function<ad::GradCheckResult()> run;
  };
  std::vector<Entry> entries;
  for (auto& k : ad::kernel_check_suite())
    entries.push_back({k.name, [run = k.run, seed = a.seed] { return run(seed); }});
  entries.push_back({"model", [&] { return model_grad_check(a.seed, a.model_sample_fraction, true); }});
  entries.push_back(
      {"model_reduced", [&] { return model_grad_check(a.seed, a.model_sample_fraction, false); }});

  std::vector<const Entry*> selected;
  if (a.ops.empty()) {
    for (const auto& e : entries) selected.push_back(&e);
  } else {
    for (const auto& name : split_list(a.ops)) {
      const auto it = std::find_if(entries.begin(), entries.end(), [&](const Entry& e) { return e.name == name; });
      if (it == entries.end()) {
        std::string known;
        for (const auto& e : entries) known += (known.empty() ? "" : ", ") + e.name;
        throw ConfigError("unknown op '" + name + "'; known: " + known);
      }
      selected.push_back(&*it);
    }
  }

  int failures = 0;
  for (const auto* e : selected) {
    const auto r = e->run();
    const bool ok = r.max_relative_error < kGradTolerance;
    if (!ok) ++failures;
    std::cout << fmt::format("{:<16} max_rel_err {:.3e}  checked {:>5}  {}\n", e->name,
                             r.max_relative_error, r.elements_checked, ok ? "PASS" : "FAIL");
  }
  std::cout << fmt::format("{} of {} checks passed (seed {}, tolerance {:g})\n",
                           selected.size() - static_cast<std::size_t>(failures), selected.size(), a.seed,
                           kGradTolerance);
  if (failures > 0) {
    std::cerr << fmt::format("bopn: error: {} gradient check(s) exceeded {:g}\n", failures, kGradTolerance);
    return 1;
  }
  return 0;
}

std::string one_line(std::string text) {
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("bopn");
  logger->set_pattern("[%H:%M:%S] [%^%l%$] %v");
  spdlog::set_default_logger(logger);
  spdlog::cfg::load_env_levels();
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Nested and flat named entity recognition with boundary offset prediction"};
  app.require_subcommand(1);

  EncodeArgs encode;
  auto* encode_cmd = app.add_subcommand("encode", "Encode a corpus into gold offset grids");
  encode_cmd->add_option("--input", encode.input, "Corpus (.jsonl or CoNLL BIO)")->required();
  encode_cmd->add_option("--max-offset", encode.max_offset, "Boundary offset range S")->capture_default_str();
  encode_cmd->add_option("--types", encode.types, "Comma-separated entity types fixing their order");
  encode_cmd->add_option("--output", encode.output, "Grid file to write")->required();
  encode_cmd->add_option("--debug-json", encode.debug_json, "Also write a readable JSON dump");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and keep the best dev checkpoint");
  train_cmd->add_option("--config", tr.config, "INI config file");
  train_cmd->add_option("--train", tr.train, "Training corpus (overrides the config)");
  train_cmd->add_option("--dev", tr.dev, "Dev corpus (overrides the config)");
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--train-embeddings", tr.train_embeddings, "Precomputed training embeddings");
  train_cmd->add_option("--dev-embeddings", tr.dev_embeddings, "Precomputed dev embeddings");
  train_cmd->add_option("--train-grids", tr.train_grids, "Pre-encoded training grids");
  train_cmd->add_option("--seed", tr.seed, "Override the configured seed");
  train_cmd->add_option("--epochs", tr.epochs, "Override the configured epoch count");

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Decode entities with a trained checkpoint");
  predict_cmd->add_option("--model", pr.model, "Checkpoint file")->required();
  predict_cmd->add_option("--input", pr.input, "Corpus to label")->required();
  predict_cmd->add_option("--output", pr.output, "Predictions JSONL")->required();
  predict_cmd->add_option("--mode", pr.mode, "center, all or rules")
      ->check(CLI::IsMember({"center", "all", "rules"}))
      ->capture_default_str();
  predict_cmd->add_option("--embeddings", pr.embeddings, "Precomputed embeddings for the input");
  predict_cmd->add_option("--grids-output", pr.grids_output, "Also write the predicted grids");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Strict precision, recall and F1");
  eval_cmd->add_option("--gold", ev.gold, "Gold corpus")->required();
  eval_cmd->add_option("--pred", ev.pred, "Predicted corpus")->required();
  eval_cmd->add_flag("--per-label", ev.per_label, "Per-label report from grid files");
  eval_cmd->add_option("--gold-grids", ev.gold_grids, "Gold grid file");
  eval_cmd->add_option("--pred-grids", ev.pred_grids, "Predicted grid file");
  eval_cmd->add_option("--json", ev.json, "Write the report as JSON");

  GradcheckArgs gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of every kernel and the model");
  grad_cmd->add_option("--seed", gc.seed, "Seed for inputs and sampling")->capture_default_str();
  grad_cmd->add_option("--ops", gc.ops, "Comma-separated subset of checks");
  grad_cmd->add_option("--model-sample", gc.model_sample_fraction,
                       "Fraction of model parameters checked")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "bopn: error: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*encode_cmd) return run_encode(encode);
    if (*train_cmd) return run_train(tr);
    if (*predict_cmd) return run_predict(pr);
    if (*eval_cmd) return run_eval(ev);
    if (*grad_cmd) return run_gradcheck(gc);
  } catch (const std::exception& e) {
    std::cerr << "bopn: error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 1;
}
