#pragma once

#include "vfevent/core.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace vfevent {

/// Lowercases and splits on whitespace.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

/// Closed vocabulary built from training text, plus a fixed number of hash
/// buckets that absorb unseen tokens.
class Tokenizer {
 public:
  Tokenizer() = default;

  Tokenizer(std::vector<std::string> vocabulary, std::size_t hash_buckets)
      : vocabulary_(std::move(vocabulary)), hash_buckets_(hash_buckets) {
    std::sort(vocabulary_.begin(), vocabulary_.end());
    vocabulary_.erase(std::unique(vocabulary_.begin(), vocabulary_.end()), vocabulary_.end());
    for (std::size_t i = 0; i < vocabulary_.size(); ++i) index_[vocabulary_[i]] = int(i);
  }

  template <typename Texts>
  static Tokenizer build(const Texts& texts, std::size_t hash_buckets) {
    std::set<std::string> words;
    for (const auto& text : texts) {
      for (auto& tok : tokenize(text)) words.insert(std::move(tok));
    }
    return Tokenizer({words.begin(), words.end()}, hash_buckets);
  }

  /// Rows needed by an embedding table indexed by this tokenizer.
  std::size_t table_size() const { return vocabulary_.size() + hash_buckets_; }
  std::size_t hash_buckets() const { return hash_buckets_; }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }

  int token_id(const std::string& token) const {
    if (auto it = index_.find(token); it != index_.end()) return it->second;
    if (hash_buckets_ == 0) {
      throw Error(ErrorKind::kInput, "token '" + token + "' is out of vocabulary and no hash buckets exist");
    }
    return int(vocabulary_.size() + fnv1a(token) % hash_buckets_);
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& tok : tokenize(text)) ids.push_back(token_id(tok));
    if (ids.empty()) throw Error(ErrorKind::kInput, "empty token sequence");
    return ids;
  }

 private:
  std::vector<std::string> vocabulary_;
  std::size_t hash_buckets_ = 0;
  std::map<std::string, int> index_;
};

}  // namespace vfevent
