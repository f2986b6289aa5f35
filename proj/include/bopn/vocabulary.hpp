#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace bopn {

/// Token-to-id map. Id 0 is padding, id 1 stands in for unseen tokens.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnknown = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnknownToken = "<unk>";

  Vocabulary();
  /// Rebuilds from a saved token list; the first two entries must be the
  /// reserved tokens.
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Adds the token if unseen; returns its id.
  std::size_t add(const std::string& token);
  std::size_t id(std::string_view token) const;
  std::vector<std::size_t> ids(const std::vector<std::string>& tokens) const;

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace bopn
