#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>

#include <json.hpp>

#include "bopn/model.hpp"
#include "bopn/types.hpp"
#include "bopn/vocabulary.hpp"

namespace bopn {

/// The file is not a checkpoint this build can load; the message lists every
/// manifest field that differs from what is expected.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct LoadedCheckpoint {
  std::unique_ptr<BoundaryOffsetModel<float>> model;
  Vocabulary vocabulary;
  TypeInventory types;
  /// Width of precomputed embeddings the model was trained on; 0 when it
  /// uses its own token table.
  std::size_t feature_dim = 0;
};

/// Layout: "BOPNCKPT", u64 manifest byte length, JSON manifest, then every
/// parameter as little-endian f32 in manifest order.
void save_checkpoint(const std::filesystem::path& path, const BoundaryOffsetModel<float>& model,
                     const Vocabulary& vocabulary, const TypeInventory& types,
                     std::size_t feature_dim = 0);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// The manifest alone, for inspection.
nlohmann::ordered_json read_checkpoint_manifest(const std::filesystem::path& path);

}  // namespace bopn
