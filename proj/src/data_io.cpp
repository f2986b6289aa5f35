#include "bopn/data_io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "binary_io.hpp"

namespace bopn {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::vector<EntitySet> Corpus::entity_sets() const {
  std::vector<EntitySet> out;
  out.reserve(documents.size());
  for (const auto& d : documents) out.push_back(d.entity_set());
  return out;
}

std::vector<std::size_t> Corpus::lengths() const {
  std::vector<std::size_t> out;
  out.reserve(documents.size());
  for (const auto& d : documents) out.push_back(d.sentence.size());
  return out;
}

namespace {

struct RawMention {
  std::string type;
  int start = 0;
  int end = 0;
};

struct RawDocument {
  std::string location;
  std::vector<std::string> tokens;
  std::vector<RawMention> mentions;
};

std::ifstream open_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return in;
}

std::ofstream create_text(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

// Resolves type names and validates every mention, prefixing errors with the
// document's location.
Corpus resolve(std::vector<RawDocument> raw, const std::optional<TypeInventory>& fixed) {
  std::optional<TypeInventory> inventory = fixed;
  if (!inventory) {
    std::set<std::string> names;
    for (const auto& d : raw)
      for (const auto& m : d.mentions) names.insert(m.type);
    if (names.empty()) throw ValidationError("corpus contains no entity types");
    inventory.emplace(std::vector<std::string>(names.begin(), names.end()));
  }
  Corpus corpus{*inventory, {}};
  corpus.documents.reserve(raw.size());
  for (auto& d : raw) {
    try {
      CorpusDocument doc{Sentence{std::move(d.tokens)}, {}};
      doc.sentence.validate();
      EntitySet seen;
      for (const auto& m : d.mentions) {
        const auto type = corpus.types.find(m.type);
        if (!type) throw ValidationError("unknown entity type '" + m.type + "'");
        const EntityMention mention{*type, m.start, m.end};
        validate_mention(mention, doc.sentence.size(), corpus.types.size());
        if (!seen.insert(mention).second)
          throw ValidationError(
              fmt::format("duplicate mention ({}, {}, {})", m.type, m.start, m.end));
        doc.entities.push_back(mention);
      }
      corpus.documents.push_back(std::move(doc));
    } catch (const ValidationError& e) {
      throw ValidationError(d.location + ": " + e.what());
    }
  }
  return corpus;
}

RawDocument parse_json_line(const std::string& text, const std::string& location) {
  RawDocument doc;
  doc.location = location;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(location + ": malformed JSON (" + e.what() + ")");
  }
  try {
    if (!j.is_object()) throw ValidationError("expected a JSON object");
    if (!j.contains("tokens") || !j["tokens"].is_array())
      throw ValidationError("missing \"tokens\" array");
    doc.tokens = j["tokens"].get<std::vector<std::string>>();
    if (j.contains("entities")) {
      if (!j["entities"].is_array()) throw ValidationError("\"entities\" must be an array");
      for (const auto& e : j["entities"]) {
        if (!e.is_object() || !e.contains("type") || !e.contains("start") || !e.contains("end"))
          throw ValidationError("entity needs \"type\", \"start\" and \"end\"");
        if (!e["start"].is_number_integer() || !e["end"].is_number_integer())
          throw ValidationError("entity start and end must be integers");
        doc.mentions.push_back(
            {e["type"].get<std::string>(), e["start"].get<int>(), e["end"].get<int>()});
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(location + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(location + ": " + e.what());
  }
  return doc;
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

Corpus read_jsonl(const fs::path& path, const std::optional<TypeInventory>& types) {
  auto in = open_text(path);
  std::vector<RawDocument> raw;
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    if (blank(line)) continue;
    raw.push_back(parse_json_line(line, fmt::format("{}:{}", path.string(), number)));
  }
  return resolve(std::move(raw), types);
}

namespace {

ordered_json document_json(const Corpus& corpus, const Sentence& sentence,
                           const EntitySet& entities) {
  std::vector<EntityMention> sorted(entities.begin(), entities.end());
  std::sort(sorted.begin(), sorted.end(), [&](const auto& a, const auto& b) {
    return std::tie(a.start, a.end, corpus.types.name(a.type)) <
           std::tie(b.start, b.end, corpus.types.name(b.type));
  });
  ordered_json list = ordered_json::array();
  for (const auto& e : sorted)
    list.push_back({{"type", corpus.types.name(e.type)}, {"start", e.start}, {"end", e.end}});
  return {{"tokens", sentence.tokens}, {"entities", list}};
}

}  // namespace

void write_predictions(const fs::path& path, const Corpus& corpus,
                       std::span<const EntitySet> predicted) {
  if (predicted.size() != corpus.documents.size())
    throw ValidationError(fmt::format("{} prediction sets for {} documents", predicted.size(),
                                      corpus.documents.size()));
  auto out = create_text(path);
  for (std::size_t k = 0; k < predicted.size(); ++k)
    out << document_json(corpus, corpus.documents[k].sentence, predicted[k]).dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void write_jsonl(const fs::path& path, const Corpus& corpus) {
  write_predictions(path, corpus, corpus.entity_sets());
}

Corpus read_conll_bio(const fs::path& path, const std::optional<TypeInventory>& types) {
  auto in = open_text(path);
  std::vector<RawDocument> raw;
  RawDocument current;
  std::optional<RawMention> open;
  auto close_mention = [&] {
    if (open) current.mentions.push_back(*open);
    open.reset();
  };
  auto close_sentence = [&] {
    close_mention();
    if (!current.tokens.empty()) raw.push_back(std::move(current));
    current = RawDocument{};
  };

  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    const std::string location = fmt::format("{}:{}", path.string(), number);
    if (blank(line)) {
      close_sentence();
      continue;
    }
    std::istringstream fields(line);
    std::vector<std::string> columns;
    for (std::string f; fields >> f;) columns.push_back(f);
    if (columns.front() == "-DOCSTART-") continue;
    if (columns.size() < 2) throw ValidationError(location + ": expected a token and a tag");
    if (current.tokens.empty()) current.location = location;

    const int index = static_cast<int>(current.tokens.size());
    current.tokens.push_back(columns.front());
    const std::string& tag = columns.back();
    if (tag == "O") {
      close_mention();
      continue;
    }
    if (tag.size() < 3 || tag[1] != '-' || (tag[0] != 'B' && tag[0] != 'I'))
      throw ValidationError(location + ": unrecognised tag '" + tag + "'");
    const std::string type = tag.substr(2);
    if (tag[0] == 'I' && open && open->type == type) {
      open->end = index;
    } else {
      close_mention();
      open = RawMention{type, index, index};
    }
  }
  close_sentence();
  return resolve(std::move(raw), types);
}

void write_conll_bio(const fs::path& path, const Corpus& corpus) {
  auto out = create_text(path);
  for (std::size_t k = 0; k < corpus.documents.size(); ++k) {
    const auto& doc = corpus.documents[k];
    std::vector<std::string> tags(doc.sentence.size(), "O");
    for (const auto& e : doc.entities)
      for (int t = e.start; t <= e.end; ++t) {
        if (tags[t] != "O")
          throw ValidationError(
              fmt::format("document {}: overlapping mentions cannot be written as BIO", k + 1));
        tags[t] = (t == e.start ? "B-" : "I-") + corpus.types.name(e.type);
      }
    for (std::size_t t = 0; t < tags.size(); ++t)
      out << doc.sentence.tokens[t] << '\t' << tags[t] << '\n';
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

Corpus read_corpus(const fs::path& path, const std::optional<TypeInventory>& types) {
  return path.extension() == ".jsonl" ? read_jsonl(path, types) : read_conll_bio(path, types);
}

EmbeddingFile read_embeddings(const fs::path& path, std::span<const std::size_t> lengths) {
  detail::BinaryReader in(path);
  const auto count = in.get<std::uint64_t>();
  const auto dim = in.get<std::uint64_t>();
  if (count != lengths.size())
    throw ValidationError(fmt::format("{}: holds {} sentences, corpus has {}", path.string(),
                                      count, lengths.size()));
  if (dim == 0 || dim > (1u << 20))
    throw ValidationError(fmt::format("{}: implausible embedding width {}", path.string(), dim));
  EmbeddingFile file;
  file.dim = dim;
  file.sentences.reserve(count);
  for (std::size_t n : lengths) {
    std::vector<float> rows(n * dim);
    for (auto& v : rows) v = in.get<float>();
    file.sentences.push_back(std::move(rows));
  }
  if (!in.at_end())
    throw ValidationError(path.string() + ": trailing data after the last sentence");
  return file;
}

void write_embeddings(const fs::path& path, const EmbeddingFile& embeddings) {
  if (embeddings.dim == 0) throw ValidationError("embedding width must be positive");
  detail::BinaryWriter out(path);
  out.put<std::uint64_t>(embeddings.sentences.size());
  out.put<std::uint64_t>(embeddings.dim);
  for (const auto& rows : embeddings.sentences) {
    if (rows.size() % embeddings.dim != 0)
      throw ValidationError("sentence block is not a whole number of rows");
    for (float v : rows) out.put(v);
  }
  out.close();
}

namespace {

constexpr char kGridMagic[8] = {'B', 'O', 'P', 'N', 'G', 'R', 'I', 'D'};
constexpr std::uint32_t kGridFormatVersion = 1;

}  // namespace

void write_grids(const fs::path& path, std::span<const OffsetGrid> grids) {
  detail::BinaryWriter out(path);
  out.bytes(kGridMagic, sizeof kGridMagic);
  out.put(kGridFormatVersion);
  out.put<std::uint32_t>(LabelSpace::kOrderVersion);
  out.put<std::uint64_t>(grids.size());
  for (const auto& g : grids) {
    out.put<std::uint32_t>(static_cast<std::uint32_t>(g.types()));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(g.length()));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(g.max_offset()));
    for (LabelIndex c : g.cells()) out.put<std::uint16_t>(c);
  }
  out.close();
}

std::vector<OffsetGrid> read_grids(const fs::path& path) {
  detail::BinaryReader in(path);
  char magic[8];
  in.bytes(magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kGridMagic))
    throw ValidationError(path.string() + ": not a grid file");
  const auto version = in.get<std::uint32_t>();
  if (version != kGridFormatVersion)
    throw ValidationError(fmt::format("{}: grid format version {}, expected {}", path.string(),
                                      version, kGridFormatVersion));
  const auto order = in.get<std::uint32_t>();
  if (order != LabelSpace::kOrderVersion)
    throw ValidationError(fmt::format("{}: label order version {}, expected {}", path.string(),
                                      order, LabelSpace::kOrderVersion));
  const auto count = in.get<std::uint64_t>();
  std::vector<OffsetGrid> grids;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto m = in.get<std::uint32_t>();
    const auto n = in.get<std::uint32_t>();
    const auto s = in.get<std::uint32_t>();
    if (m == 0 || m > 4096 || n > 4096 || s > 1024)
      throw ValidationError(fmt::format("{}: grid {} has implausible dimensions", path.string(), k));
    std::vector<LabelIndex> cells(static_cast<std::size_t>(m) * n * n);
    for (auto& c : cells) c = in.get<std::uint16_t>();
    OffsetGrid grid(m, n, static_cast<int>(s));
    grid.assign(cells);
    grids.push_back(std::move(grid));
  }
  if (!in.at_end()) throw ValidationError(path.string() + ": trailing data after the last grid");
  return grids;
}

ordered_json grids_debug_json(const Corpus& corpus, std::span<const OffsetGrid> grids) {
  if (grids.size() != corpus.documents.size())
    throw ValidationError(
        fmt::format("{} grids for {} documents", grids.size(), corpus.documents.size()));
  ordered_json out = ordered_json::array();
  for (std::size_t k = 0; k < grids.size(); ++k) {
    const auto& g = grids[k];
    ordered_json per_type = ordered_json::object();
    for (std::size_t m = 0; m < g.types(); ++m) {
      ordered_json rows = ordered_json::array();
      for (std::size_t i = 0; i < g.length(); ++i) {
        std::vector<std::string> row;
        for (std::size_t j = 0; j < g.length(); ++j) row.push_back(g.label(m, i, j).notation());
        rows.push_back(row);
      }
      per_type[corpus.types.name(static_cast<int>(m))] = rows;
    }
    out.push_back({{"tokens", corpus.documents[k].sentence.tokens},
                   {"max_offset", g.max_offset()},
                   {"grids", per_type}});
  }
  return out;
}

}  // namespace bopn
