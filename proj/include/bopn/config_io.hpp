#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "bopn/types.hpp"

namespace bopn {

/// Corpus locations named by a config file; command-line flags override them.
struct DataPaths {
  std::filesystem::path train;
  std::filesystem::path dev;
  std::filesystem::path train_embeddings;
  std::filesystem::path dev_embeddings;
  /// Pre-encoded gold grids for the training corpus.
  std::filesystem::path train_grids;
};

struct RunConfig {
  ModelConfig model;
  DataPaths data;
};

/// INI text with sections [model], [ablation], [train] and [data]. Unknown
/// sections or keys, and malformed values, throw ConfigError naming them.
/// Omitted keys keep their defaults. The result is validated.
RunConfig parse_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_config_file(const std::filesystem::path& path);

/// Every key with its effective value, in the same INI layout.
std::string render_config(const RunConfig& config);

nlohmann::ordered_json config_to_json(const ModelConfig& config);
/// Throws ConfigError for a missing or unknown key.
ModelConfig config_from_json(const nlohmann::json& json);

}  // namespace bopn
