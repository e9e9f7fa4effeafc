#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cisper {

// Token inventory: [PAD] [UNK] [CLS] [SEP] [MASK], then reserved [unusedN]
// slots for pseudo tokens, then ordinary word pieces ("##" marks a suffix).
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;

  Vocabulary() = default;
  // `words` excludes specials and reserved slots; duplicates are dropped.
  Vocabulary(const std::vector<std::string>& words, int reserved);

  // BERT-style vocab.txt; specials must occupy ids 0..4.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Builds from whitespace/punctuation split words of `texts`, most frequent
  // first (ties alphabetical), capped at `max_words`; `required` words are
  // always included.
  static Vocabulary build(const std::vector<std::string>& texts,
                          const std::vector<std::string>& required, int max_words, int reserved);

  std::optional<int> id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  int reserved_count() const { return reserved_; }
  int reserved_id(int k) const;  // id of [unused k]
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int reserved_ = 0;
};

// Lower-cases ASCII and splits on whitespace, isolating punctuation characters.
std::vector<std::string> basic_split(std::string_view text);

// Greedy longest-match-first word-piece tokenizer. A word that cannot be
// covered by pieces becomes a single [UNK].
class WordPieceTokenizer {
 public:
  explicit WordPieceTokenizer(const Vocabulary& vocab) : vocab_(&vocab) {}

  std::vector<int> encode_word(std::string_view word) const;
  std::vector<int> encode(std::string_view text) const;
  const Vocabulary& vocabulary() const { return *vocab_; }

 private:
  const Vocabulary* vocab_;
};

}  // namespace cisper
