#include "bopn/checkpoint.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <cmath>
#include <string>

#include "binary_io.hpp"
#include "bopn/config_io.hpp"

namespace bopn {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr char kMagic[8] = {'B', 'O', 'P', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint64_t kMaxManifest = 1ull << 30;

ordered_json parameter_list(const ParameterSet<float>& params) {
  ordered_json list = ordered_json::array();
  for (const auto& p : params.entries()) list.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  return list;
}

ordered_json read_manifest(detail::BinaryReader& in) {
  char magic[8];
  in.bytes(magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kMagic))
    throw CheckpointError(in.path().string() + ": not a checkpoint file");
  const auto length = in.get<std::uint64_t>();
  if (length == 0 || length > kMaxManifest)
    throw CheckpointError(in.path().string() + ": implausible manifest length");
  std::string text(length, '\0');
  try {
    in.bytes(text.data(), length);
    return ordered_json::parse(text);
  } catch (const ValidationError& e) {
    throw CheckpointError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(in.path().string() + ": unreadable manifest (" + e.what() + ")");
  }
}

void expect(std::vector<std::string>& diffs, const char* field, const ordered_json& actual,
            const ordered_json& expected) {
  if (actual != expected)
    diffs.push_back(fmt::format("{}: file has {}, expected {}", field, actual.dump(), expected.dump()));
}

}  // namespace

void save_checkpoint(const fs::path& path, const BoundaryOffsetModel<float>& model,
                     const Vocabulary& vocabulary, const TypeInventory& types,
                     std::size_t feature_dim) {
  if (model.vocab_size() != vocabulary.size())
    throw ValidationError("model and vocabulary sizes differ");
  if (model.type_count() != types.size()) throw ValidationError("model and type inventory differ");
  ordered_json manifest = {
      {"format", "bopn-checkpoint"},
      {"format_version", kCheckpointFormatVersion},
      {"label_order_version", LabelSpace::kOrderVersion},
      {"config", config_to_json(model.config())},
      {"feature_dim", feature_dim},
      {"vocabulary", vocabulary.tokens()},
      {"types", types.names()},
      {"parameters", parameter_list(model.parameters())},
  };
  const std::string text = manifest.dump();

  // Write beside the target first so an interrupted save never leaves a
  // truncated checkpoint in place.
  const fs::path staging = path.string() + ".partial";
  {
    detail::BinaryWriter out(staging);
    out.bytes(kMagic, sizeof kMagic);
    out.put<std::uint64_t>(text.size());
    out.bytes(text.data(), text.size());
    for (const auto& p : model.parameters().entries())
      for (float v : p.tensor.values()) out.put(v);
    out.close();
  }
  std::error_code ec;
  fs::rename(staging, path, ec);
  if (ec) throw IoError(fmt::format("cannot move checkpoint into {}: {}", path.string(), ec.message()));
}

ordered_json read_checkpoint_manifest(const fs::path& path) {
  detail::BinaryReader in(path);
  return read_manifest(in);
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  detail::BinaryReader in(path);
  const auto manifest = read_manifest(in);

  std::vector<std::string> diffs;
  expect(diffs, "format", manifest.value("format", ordered_json()), "bopn-checkpoint");
  expect(diffs, "format_version", manifest.value("format_version", ordered_json()),
         kCheckpointFormatVersion);
  expect(diffs, "label_order_version", manifest.value("label_order_version", ordered_json()),
         LabelSpace::kOrderVersion);
  if (!diffs.empty())
    throw CheckpointError(path.string() + ": incompatible checkpoint; " + fmt::format("{}", fmt::join(diffs, "; ")));

  try {
    const auto config = config_from_json(manifest.at("config"));
    Vocabulary vocabulary(manifest.at("vocabulary").get<std::vector<std::string>>());
    TypeInventory types(manifest.at("types").get<std::vector<std::string>>());
    const auto feature_dim = manifest.at("feature_dim").get<std::size_t>();
    auto model = std::make_unique<BoundaryOffsetModel<float>>(config, vocabulary.size(), types.size());

    expect(diffs, "parameters", manifest.at("parameters"), parameter_list(model->parameters()));
    if (!diffs.empty())
      throw CheckpointError(path.string() + ": parameter layout does not match its config; " +
                            diffs.front());
    for (const auto& p : model->parameters().entries()) {
      auto tensor = p.tensor;
      for (auto& v : tensor.mutable_values()) {
        v = in.get<float>();
        if (!std::isfinite(v))
          throw CheckpointError(path.string() + ": non-finite value in parameter " + p.name);
      }
    }
    if (!in.at_end()) throw CheckpointError(path.string() + ": trailing data after parameters");
    return {std::move(model), std::move(vocabulary), std::move(types), feature_dim};
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed manifest (" + e.what() + ")");
  } catch (const ConfigError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace bopn
