#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bopn/types.hpp"

namespace bopn {

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CorpusDocument {
  Sentence sentence;
  std::vector<EntityMention> entities;

  EntitySet entity_set() const { return {entities.begin(), entities.end()}; }
};

struct Corpus {
  TypeInventory types;
  std::vector<CorpusDocument> documents;

  std::vector<EntitySet> entity_sets() const;
  std::vector<std::size_t> lengths() const;
};

/// One JSON object per line: {"tokens": [...], "entities": [{"type", "start",
/// "end"}]} with inclusive indices. "entities" may be omitted. Without a
/// fixed inventory the types found are sorted by name. Errors name the file
/// and line.
Corpus read_jsonl(const std::filesystem::path& path,
                  const std::optional<TypeInventory>& types = std::nullopt);
void write_jsonl(const std::filesystem::path& path, const Corpus& corpus);

/// Blank-line separated sentences, token in the first column and tag in the
/// last. "-DOCSTART-" lines are skipped. An I- tag that does not continue an
/// open mention of the same type starts a new mention.
Corpus read_conll_bio(const std::filesystem::path& path,
                      const std::optional<TypeInventory>& types = std::nullopt);
/// Flat corpora only; throws ValidationError on overlapping mentions.
void write_conll_bio(const std::filesystem::path& path, const Corpus& corpus);

/// JSONL in the input schema with `predicted` replacing the gold entities.
/// Keys are written in the order tokens, entities / type, start, end, and
/// entities are sorted by (start, end, type name).
void write_predictions(const std::filesystem::path& path, const Corpus& corpus,
                       std::span<const EntitySet> predicted);

/// Reads .jsonl, or CoNLL BIO for any other extension.
Corpus read_corpus(const std::filesystem::path& path,
                   const std::optional<TypeInventory>& types = std::nullopt);

/// Precomputed token vectors: one row-major [length, dim] block per sentence.
struct EmbeddingFile {
  std::size_t dim = 0;
  std::vector<std::vector<float>> sentences;
};

/// Layout: u64 sentence count, u64 dim, then every sentence's rows as
/// little-endian f32. Row counts come from `lengths`; the file must match
/// them exactly.
EmbeddingFile read_embeddings(const std::filesystem::path& path,
                              std::span<const std::size_t> lengths);
void write_embeddings(const std::filesystem::path& path, const EmbeddingFile& embeddings);

/// Layout: "BOPNGRID", u32 format version, u32 label order version, u64 grid
/// count, then per grid u32 M, u32 N, u32 S and M*N*N little-endian u16 label
/// indices.
void write_grids(const std::filesystem::path& path, std::span<const OffsetGrid> grids);
std::vector<OffsetGrid> read_grids(const std::filesystem::path& path);

/// Human-readable dump: per sentence and type, an N x N table of label
/// notations (rows are starts, columns are ends).
nlohmann::ordered_json grids_debug_json(const Corpus& corpus, std::span<const OffsetGrid> grids);

}  // namespace bopn
