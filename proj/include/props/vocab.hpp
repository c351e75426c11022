#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace props {

/// Token <-> id table. Ids 0..4 are reserved; the rest are ordered by
/// descending corpus frequency, then lexicographically.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kSep = 4;
  static constexpr int kReserved = 5;

  Vocab();
  /// Builds from whitespace-separated, lowercased texts.
  static Vocab build(const std::vector<std::string>& corpus);
  /// Rebuilds from an explicit token list (e.g. a checkpoint manifest).
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::vector<std::string>& words) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

/// Lowercase + whitespace split.
std::vector<std::string> split_words(std::string_view text);
std::string join_words(const std::vector<std::string>& words);

/// Whitespace tokenization; unknown words map to unk.
std::vector<int> tokenize(std::string_view text, const Vocab& vocab);

}  // namespace props
