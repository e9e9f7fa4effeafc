#include "cisper/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <unordered_set>

#include <fmt/format.h>

#include "cisper/error.hpp"

namespace cisper {

namespace {

const char* const kSpecials[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

}  // namespace

Vocabulary::Vocabulary(const std::vector<std::string>& words, int reserved) : reserved_(reserved) {
  if (reserved < 0) throw ConfigError("reserved token count must be non-negative");
  for (const char* s : kSpecials) tokens_.emplace_back(s);
  for (int k = 0; k < reserved; ++k) tokens_.push_back(fmt::format("[unused{}]", k));
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
  for (const auto& w : words) {
    if (index_.count(w) != 0) continue;
    index_.emplace(w, static_cast<int>(tokens_.size()));
    tokens_.push_back(w);
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open vocabulary {}", path.string()));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.size() < std::size(kSpecials)) throw SchemaError("vocabulary too short");
  for (std::size_t i = 0; i < std::size(kSpecials); ++i) {
    if (lines[i] != kSpecials[i]) {
      throw SchemaError(fmt::format("vocabulary line {} must be {}", i + 1, kSpecials[i]));
    }
  }
  int reserved = 0;
  while (std::size(kSpecials) + static_cast<std::size_t>(reserved) < lines.size() &&
         lines[std::size(kSpecials) + static_cast<std::size_t>(reserved)] ==
             fmt::format("[unused{}]", reserved)) {
    ++reserved;
  }
  std::vector<std::string> words(lines.begin() + static_cast<long>(std::size(kSpecials)) + reserved,
                                 lines.end());
  return Vocabulary(words, reserved);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError(fmt::format("cannot write vocabulary {}", path.string()));
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts,
                             const std::vector<std::string>& required, int max_words,
                             int reserved) {
  std::map<std::string, std::size_t> freq;
  for (const auto& t : texts) {
    for (auto& w : basic_split(t)) ++freq[w];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  std::unordered_set<std::string> taken;
  for (const auto& r : required) {
    for (auto& w : basic_split(r)) {
      if (taken.insert(w).second) words.push_back(w);
    }
  }
  for (const auto& [w, n] : ranked) {
    if (static_cast<int>(words.size()) >= max_words) break;
    if (taken.insert(w).second) words.push_back(w);
  }
  return Vocabulary(words, reserved);
}

std::optional<int> Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::reserved_id(int k) const {
  if (k < 0 || k >= reserved_) {
    throw ConfigError(fmt::format("vocabulary reserves {} pseudo-token ids, requested #{}",
                                  reserved_, k));
  }
  return static_cast<int>(std::size(kSpecials)) + k;
}

std::vector<std::string> basic_split(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  flush();
  return out;
}

std::vector<int> WordPieceTokenizer::encode_word(std::string_view word) const {
  std::vector<int> pieces;
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    std::optional<int> found;
    while (end > start) {
      std::string piece(word.substr(start, end - start));
      if (start > 0) piece = "##" + piece;
      found = vocab_->id(piece);
      if (found) break;
      --end;
    }
    if (!found) return {Vocabulary::kUnk};
    pieces.push_back(*found);
    start = end;
  }
  return pieces;
}

std::vector<int> WordPieceTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : basic_split(text)) {
    const auto p = encode_word(w);
    ids.insert(ids.end(), p.begin(), p.end());
  }
  return ids;
}

}  // namespace cisper
