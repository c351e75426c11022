#include "props/vocab.hpp"

#include "props/tensor.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace props {

namespace {

const std::vector<std::string> kReservedTokens = {"<pad>", "<unk>", "<bos>", "<eos>", "<sep>"};

}  // namespace

Vocab::Vocab() : tokens_(kReservedTokens) {
  for (int i = 0; i < size(); ++i) index_.emplace(tokens_[static_cast<std::size_t>(i)], i);
}

Vocab Vocab::build(const std::vector<std::string>& corpus) {
  std::map<std::string, long> counts;
  for (const auto& text : corpus) {
    for (auto& w : split_words(text)) ++counts[w];
  }
  std::vector<std::pair<std::string, long>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [word, n] : ordered) {
    if (v.index_.count(word)) continue;
    v.index_.emplace(word, v.size());
    v.tokens_.push_back(word);
  }
  return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < kReservedTokens.size() ||
      !std::equal(kReservedTokens.begin(), kReservedTokens.end(), tokens.begin())) {
    throw ConfigError("vocabulary does not start with the reserved tokens");
  }
  Vocab v;
  for (std::size_t i = kReservedTokens.size(); i < tokens.size(); ++i) {
    if (!v.index_.emplace(tokens[i], v.size()).second) {
      throw ConfigError("duplicate vocabulary token '" + tokens[i] + "'");
    }
    v.tokens_.push_back(tokens[i]);
  }
  return v;
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) {
    throw DimensionError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& words) const {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (int i : ids) words.push_back(token(i));
  return words;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::string join_words(const std::vector<std::string>& words) {
  std::ostringstream out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out << ' ';
    out << words[i];
  }
  return out.str();
}

std::vector<int> tokenize(std::string_view text, const Vocab& vocab) { return vocab.encode(split_words(text)); }

}  // namespace props
