#include "bopn/vocabulary.hpp"

#include "bopn/types.hpp"

namespace bopn {

Vocabulary::Vocabulary() {
  add(std::string(kPadToken));
  add(std::string(kUnknownToken));
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[kPad] != kPadToken || tokens[kUnknown] != kUnknownToken)
    throw ValidationError("vocabulary must start with <pad> and <unk>");
  for (auto& token : tokens)
    if (!index_.emplace(token, tokens_.size()).second)
      throw ValidationError("vocabulary contains duplicate token '" + token + "'");
    else
      tokens_.push_back(std::move(token));
}

std::size_t Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::size_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnknown : it->second;
}

std::vector<std::size_t> Vocabulary::ids(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

}  // namespace bopn
