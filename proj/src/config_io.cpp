#include "bopn/config_io.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "bopn/data_io.hpp"

namespace bopn {

namespace {

using Parse = std::function<void(RunConfig&, const std::string&)>;
using Render = std::function<std::string(const RunConfig&)>;

struct Field {
  const char* section;
  const char* key;
  Parse parse;
  Render render;
};

template <typename T>
T parse_number(const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("'" + text + "' is not a valid number");
  return value;
}

template <>
double parse_number<double>(const std::string& text) {
  std::size_t used = 0;
  double value = 0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw ConfigError("'" + text + "' is not a valid number");
  return value;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("'" + text + "' is not a boolean");
}

std::vector<int> parse_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    if (first == std::string::npos) throw ConfigError("empty entry in list '" + text + "'");
    out.push_back(parse_number<int>(item.substr(first, last - first + 1)));
  }
  return out;
}

template <typename T>
Field number(const char* section, const char* key, T ModelConfig::*member) {
  return {section, key,
          [member](RunConfig& c, const std::string& v) { c.model.*member = parse_number<T>(v); },
          [member](const RunConfig& c) { return fmt::format("{}", c.model.*member); }};
}

Field flag(const char* section, const char* key, bool ModelConfig::*member) {
  return {section, key,
          [member](RunConfig& c, const std::string& v) { c.model.*member = parse_bool(v); },
          [member](const RunConfig& c) { return std::string(c.model.*member ? "true" : "false"); }};
}

Field path(const char* key, std::filesystem::path DataPaths::*member) {
  return {"data", key, [member](RunConfig& c, const std::string& v) { c.data.*member = v; },
          [member](const RunConfig& c) { return (c.data.*member).string(); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      number("model", "max_offset", &ModelConfig::max_offset),
      number("model", "embedding_dim", &ModelConfig::embedding_dim),
      number("model", "hidden_size", &ModelConfig::hidden_size),
      number("model", "region_embedding_size", &ModelConfig::region_embedding_size),
      number("model", "biaffine_size", &ModelConfig::biaffine_size),
      {"model", "conv_dilations",
       [](RunConfig& c, const std::string& v) { c.model.conv_dilations = parse_list(v); },
       [](const RunConfig& c) { return fmt::format("{}", fmt::join(c.model.conv_dilations, ",")); }},
      number("model", "conv_kernel", &ModelConfig::conv_kernel),
      number("model", "conv_channels", &ModelConfig::conv_channels),
      number("model", "lstm_dropout", &ModelConfig::lstm_dropout),
      number("model", "biaffine_dropout", &ModelConfig::biaffine_dropout),
      flag("ablation", "use_type_inputs", &ModelConfig::use_type_inputs),
      flag("ablation", "use_region_embedding", &ModelConfig::use_region_embedding),
      flag("ablation", "use_conv_stack", &ModelConfig::use_conv_stack),
      number("train", "learning_rate", &ModelConfig::learning_rate),
      number("train", "warm_factor", &ModelConfig::warm_factor),
      number("train", "epochs", &ModelConfig::epochs),
      number("train", "batch_size", &ModelConfig::batch_size),
      number("train", "seed", &ModelConfig::seed),
      number("train", "weight_decay", &ModelConfig::weight_decay),
      number("train", "adam_beta1", &ModelConfig::adam_beta1),
      number("train", "adam_beta2", &ModelConfig::adam_beta2),
      number("train", "adam_epsilon", &ModelConfig::adam_epsilon),
      number("train", "grad_clip", &ModelConfig::grad_clip),
      path("train", &DataPaths::train),
      path("dev", &DataPaths::dev),
      path("train_embeddings", &DataPaths::train_embeddings),
      path("dev_embeddings", &DataPaths::dev_embeddings),
      path("train_grids", &DataPaths::train_grids),
  };
  return table;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields())
    if (section == f.section && key == f.key) return &f;
  return nullptr;
}

}  // namespace

RunConfig parse_config(std::string_view text, const std::string& source) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("{}:{}: {}", source, e.line(), e.message()));
  }

  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty())
      throw ConfigError(fmt::format("{}: key '{}' must be inside a section", source, section));
    for (const auto& [key, value] : body) {
      const auto* field = find_field(section, key);
      if (field == nullptr)
        throw ConfigError(fmt::format("{}: unknown key '{}' in [{}]", source, key, section));
      try {
        field->parse(config, value.data());
      } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: [{}] {}: {}", source, section, key, e.what()));
      }
    }
  }
  config.model.validate();
  return config;
}

RunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

std::string render_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += fmt::format("[{}]\n", section);
    }
    out += fmt::format("{} = {}\n", f.key, f.render(config));
  }
  return out;
}

nlohmann::ordered_json config_to_json(const ModelConfig& config) {
  nlohmann::ordered_json j;
  const RunConfig run{config, {}};
  for (const auto& f : fields())
    if (std::string_view(f.section) != "data") j[f.key] = f.render(run);
  return j;
}

ModelConfig config_from_json(const nlohmann::json& json) {
  if (!json.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig run;
  std::size_t seen = 0;
  for (const auto& f : fields()) {
    if (std::string_view(f.section) == "data") continue;
    if (!json.contains(f.key)) throw ConfigError(fmt::format("config is missing '{}'", f.key));
    if (!json[f.key].is_string()) throw ConfigError(fmt::format("config '{}' must be a string", f.key));
    f.parse(run, json[f.key].get<std::string>());
    ++seen;
  }
  if (json.size() != seen) {
    for (const auto& [key, value] : json.items())
      if (find_field("model", key) == nullptr && find_field("ablation", key) == nullptr &&
          find_field("train", key) == nullptr)
        throw ConfigError(fmt::format("config has unknown key '{}'", key));
  }
  run.model.validate();
  return run.model;
}

}  // namespace bopn
