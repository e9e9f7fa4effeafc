#include "cisper/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cisper/error.hpp"

namespace cisper {

using nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "validation" || name == "val" || name == "dev") return Split::validation;
  if (name == "test") return Split::test;
  throw ConfigError(fmt::format("unknown split '{}'", name));
}

DatasetFormat parse_format(std::string_view name) {
  if (name == "meld-csv") return DatasetFormat::meld_csv;
  if (name == "emorynlp-json") return DatasetFormat::emorynlp_json;
  if (name == "generic-jsonl") return DatasetFormat::generic_jsonl;
  throw ConfigError(fmt::format(
      "unknown dataset adapter '{}' (expected meld-csv, emorynlp-json or generic-jsonl)", name));
}

std::string_view to_string(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::meld_csv: return "meld-csv";
    case DatasetFormat::emorynlp_json: return "emorynlp-json";
    case DatasetFormat::generic_jsonl: return "generic-jsonl";
  }
  return "generic-jsonl";
}

std::size_t Corpus::utterance_count() const {
  std::size_t n = 0;
  for (const auto& c : conversations) n += c.size();
  return n;
}

const Conversation& Corpus::conversation(std::string_view id) const {
  for (const auto& c : conversations) {
    if (c.id == id) return c;
  }
  throw NotFoundError(fmt::format("no conversation '{}'", id));
}

std::string normalize_emotion(std::string_view raw) {
  std::size_t b = 0;
  std::size_t e = raw.size();
  while (b < e && std::isspace(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(raw[e - 1]))) --e;
  std::string out(raw.substr(b, e - b));
  for (char& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

namespace {

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// Numeric ids order numerically, everything else lexically.
bool id_less(const std::string& a, const std::string& b) {
  if (all_digits(a) && all_digits(b)) {
    if (a.size() != b.size()) return a.size() < b.size();
  }
  return a < b;
}

// Replaces bytes that do not form valid UTF-8 with U+FFFD.
std::string sanitize_utf8(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  std::size_t i = 0;
  while (i < in.size()) {
    const auto c = static_cast<unsigned char>(in[i]);
    std::size_t len = 0;
    if (c < 0x80) len = 1;
    else if ((c >> 5) == 0x6) len = 2;
    else if ((c >> 4) == 0xE) len = 3;
    else if ((c >> 3) == 0x1E) len = 4;
    bool ok = len > 0 && i + len <= in.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      ok = (static_cast<unsigned char>(in[i + k]) >> 6) == 0x2;
    }
    if (ok) {
      out.append(in.substr(i, len));
      i += len;
    } else {
      out.append("\xEF\xBF\xBD");
      ++i;
    }
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(fmt::format("cannot open dataset file {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int parse_index(std::string_view s, std::string_view what) {
  int v = 0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) throw DatasetError(fmt::format("bad {} '{}'", what, s));
  return v;
}

// RFC 4180 reader: quoted fields may contain separators, quotes ("") and newlines.
std::vector<std::vector<std::string>> parse_csv(const std::string& data) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t i = 0;
  if (data.rfind("\xEF\xBB\xBF", 0) == 0) i = 3;
  for (; i < data.size(); ++i) {
    const char c = data[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < data.size() && data[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < data.size() && data[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      field_started = false;
      if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
      row.clear();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (field_started || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string placeholder_if_empty(std::string text, const std::string& conv, int index) {
  if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) {
    spdlog::warn("conversation {} utterance {} has empty text; using '...'", conv, index);
    return "...";
  }
  return text;
}

// Sorts utterances by their source ordinal within each conversation and
// renumbers them 0..L-1. Published corpora contain gaps in their ids.
std::vector<Utterance> renumber(std::vector<std::pair<int, Utterance>> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.second.conversation_id != b.second.conversation_id) {
      return id_less(a.second.conversation_id, b.second.conversation_id);
    }
    return a.first < b.first;
  });
  std::vector<Utterance> out;
  out.reserve(rows.size());
  std::string current;
  int next = 0;
  int last_source = 0;
  for (auto& [source, u] : rows) {
    if (out.empty() || u.conversation_id != current) {
      current = u.conversation_id;
      next = 0;
    } else if (source == last_source) {
      throw DatasetError(fmt::format("conversation {}: duplicate utterance id {}", current, source));
    } else if (source != last_source + 1) {
      spdlog::debug("conversation {}: utterance ids jump from {} to {}", current, last_source,
                    source);
    }
    last_source = source;
    u.index = next++;
    out.push_back(std::move(u));
  }
  return out;
}

Corpus load_meld(const std::filesystem::path& path, Split split) {
  const auto rows = parse_csv(read_file(path));
  if (rows.empty()) throw DatasetError(fmt::format("{}: empty CSV", path.string()));
  const auto& header = rows.front();
  auto column = [&](std::string_view name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw DatasetError(fmt::format("{}: missing MELD column '{}'", path.string(), name));
  };
  const std::size_t c_text = column("Utterance");
  const std::size_t c_speaker = column("Speaker");
  const std::size_t c_emotion = column("Emotion");
  const std::size_t c_dialogue = column("Dialogue_ID");
  const std::size_t c_utt = column("Utterance_ID");
  const std::size_t needed = std::max({c_text, c_speaker, c_emotion, c_dialogue, c_utt});

  std::vector<std::pair<int, Utterance>> items;
  std::vector<std::string> label_order;
  std::set<std::string> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() <= needed) {
      throw DatasetError(fmt::format("{}: row {} has {} fields", path.string(), r, row.size()));
    }
    Utterance u;
    u.conversation_id = row[c_dialogue];
    const int source = parse_index(row[c_utt], "Utterance_ID");
    u.speaker = sanitize_utf8(row[c_speaker]);
    u.text = placeholder_if_empty(sanitize_utf8(row[c_text]), u.conversation_id, source);
    std::string emo = normalize_emotion(row[c_emotion]);
    if (!emo.empty()) {
      if (seen.insert(emo).second) label_order.push_back(emo);
      u.emotion = std::move(emo);
    }
    items.emplace_back(source, std::move(u));
  }
  Corpus c = assemble_corpus(renumber(std::move(items)), split, path.string());
  c.labels = std::move(label_order);
  return c;
}

Corpus load_emorynlp(const std::filesystem::path& path, Split split) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DatasetError(fmt::format("{}: {}", path.string(), e.what()));
  }
  std::vector<std::pair<int, Utterance>> items;
  std::vector<std::string> label_order;
  std::set<std::string> seen;
  try {
    for (const auto& episode : doc.at("episodes")) {
      for (const auto& scene : episode.at("scenes")) {
        const std::string scene_id = scene.at("scene_id").get<std::string>();
        int position = 0;
        for (const auto& utt : scene.at("utterances")) {
          Utterance u;
          u.conversation_id = scene_id;
          std::string speakers;
          if (auto it = utt.find("speakers"); it != utt.end()) {
            for (const auto& s : *it) {
              if (!speakers.empty()) speakers += ", ";
              speakers += s.get<std::string>();
            }
          }
          u.speaker = std::move(speakers);
          u.text = placeholder_if_empty(utt.at("transcript").get<std::string>(), scene_id, position);
          if (auto it = utt.find("emotion"); it != utt.end() && it->is_string()) {
            std::string emo = normalize_emotion(it->get<std::string>());
            if (!emo.empty()) {
              if (seen.insert(emo).second) label_order.push_back(emo);
              u.emotion = std::move(emo);
            }
          }
          items.emplace_back(position++, std::move(u));
        }
      }
    }
  } catch (const json::exception& e) {
    throw DatasetError(fmt::format("{}: unexpected EmoryNLP layout: {}", path.string(), e.what()));
  }
  Corpus c = assemble_corpus(renumber(std::move(items)), split, path.string());
  c.labels = std::move(label_order);
  return c;
}

Corpus load_jsonl(const std::filesystem::path& path, Split split) {
  std::ifstream in(path);
  if (!in) throw DatasetError(fmt::format("cannot open dataset file {}", path.string()));
  std::vector<Utterance> utterances;
  std::vector<std::string> label_order;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json rec = json::parse(line);
      Utterance u;
      u.conversation_id = rec.at("conversation_id").is_string()
                              ? rec.at("conversation_id").get<std::string>()
                              : rec.at("conversation_id").dump();
      u.index = rec.at("index").get<int>();
      u.speaker = rec.value("speaker", std::string{});
      u.text = rec.at("text").get<std::string>();
      if (u.text.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw DatasetError(fmt::format("{}:{}: conversation {} utterance {} has empty text",
                                       path.string(), lineno, u.conversation_id, u.index));
      }
      if (auto it = rec.find("emotion"); it != rec.end() && !it->is_null()) {
        std::string emo = normalize_emotion(it->get<std::string>());
        if (seen.insert(emo).second) label_order.push_back(emo);
        u.emotion = std::move(emo);
      }
      utterances.push_back(std::move(u));
    } catch (const json::exception& e) {
      throw DatasetError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  Corpus c = assemble_corpus(std::move(utterances), split, path.string());
  c.labels = std::move(label_order);
  return c;
}

}  // namespace

Corpus assemble_corpus(std::vector<Utterance> utterances, Split split, std::string_view source) {
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<Conversation> convs;
  std::vector<std::string> label_order;
  std::set<std::string> seen;
  for (auto& u : utterances) {
    if (u.emotion && seen.insert(*u.emotion).second) label_order.push_back(*u.emotion);
    auto [it, inserted] = slot.try_emplace(u.conversation_id, convs.size());
    if (inserted) convs.push_back(Conversation{u.conversation_id, {}});
    convs[it->second].utterances.push_back(std::move(u));
  }
  for (auto& c : convs) {
    std::sort(c.utterances.begin(), c.utterances.end(),
              [](const Utterance& a, const Utterance& b) { return a.index < b.index; });
    for (std::size_t i = 0; i < c.utterances.size(); ++i) {
      const int idx = c.utterances[i].index;
      if (idx == static_cast<int>(i)) continue;
      if (i > 0 && idx == c.utterances[i - 1].index) {
        throw DatasetError(fmt::format("{}: conversation {} has duplicate index {}", source, c.id, idx));
      }
      throw DatasetError(
          fmt::format("{}: conversation {} is missing index {}", source, c.id, static_cast<int>(i)));
    }
  }
  std::sort(convs.begin(), convs.end(),
            [](const Conversation& a, const Conversation& b) { return id_less(a.id, b.id); });
  Corpus corpus;
  corpus.conversations = std::move(convs);
  corpus.labels = std::move(label_order);
  corpus.split = split;
  return corpus;
}

Corpus load_dataset(const std::filesystem::path& path, std::string_view format, Split split) {
  return load_dataset(path, parse_format(format), split);
}

Corpus load_dataset(const std::filesystem::path& path, DatasetFormat format, Split split) {
  if (!std::filesystem::exists(path)) {
    throw DatasetError(fmt::format("dataset file {} does not exist", path.string()));
  }
  switch (format) {
    case DatasetFormat::meld_csv: return load_meld(path, split);
    case DatasetFormat::emorynlp_json: return load_emorynlp(path, split);
    case DatasetFormat::generic_jsonl: return load_jsonl(path, split);
  }
  throw ConfigError("unknown dataset adapter");
}

void write_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError(fmt::format("cannot write {}", path.string()));
  for (const auto& c : corpus.conversations) {
    for (const auto& u : c.utterances) {
      json rec = {{"conversation_id", u.conversation_id},
                  {"index", u.index},
                  {"speaker", u.speaker},
                  {"text", u.text}};
      if (u.emotion) rec["emotion"] = *u.emotion;
      out << rec.dump() << '\n';
    }
  }
}

std::vector<std::string> label_set(const Corpus& corpus) {
  if (corpus.labels.empty()) {
    throw DatasetError(fmt::format("{} corpus has no labeled utterances", to_string(corpus.split)));
  }
  return corpus.labels;
}

std::vector<std::string> union_label_set(const std::map<Split, const Corpus*>& splits) {
  std::vector<std::string> out;
  std::set<std::string> train_labels;
  if (auto it = splits.find(Split::train); it != splits.end() && it->second != nullptr) {
    out = label_set(*it->second);
    train_labels.insert(out.begin(), out.end());
  }
  for (const auto& [split, corpus] : splits) {
    if (split == Split::train || corpus == nullptr) continue;
    for (const auto& l : corpus->labels) {
      if (train_labels.count(l) == 0) {
        throw DatasetError(fmt::format("label '{}' occurs in the {} split but not in train", l,
                                       to_string(split)));
      }
    }
  }
  if (out.empty()) throw DatasetError("no training labels available");
  return out;
}

SplitReport split_counts(const std::map<Split, const Corpus*>& splits) {
  SplitReport report;
  for (Split s : {Split::train, Split::validation, Split::test}) {
    SplitCounts counts;
    if (auto it = splits.find(s); it != splits.end() && it->second != nullptr) {
      counts.conversations = it->second->conversations.size();
      counts.utterances = it->second->utterance_count();
    }
    report.counts[s] = counts;
  }
  return report;
}

std::string SplitReport::format_table(std::string_view dataset_name) const {
  auto get = [&](Split s) {
    auto it = counts.find(s);
    return it == counts.end() ? SplitCounts{} : it->second;
  };
  auto grouped = [](std::size_t n) {
    std::string digits = std::to_string(n);
    std::string out;
    for (std::size_t i = 0; i < digits.size(); ++i) {
      if (i > 0 && (digits.size() - i) % 3 == 0) out.push_back(',');
      out.push_back(digits[i]);
    }
    return out;
  };
  std::string s;
  s += fmt::format("{:<10} | {:>26} | {:>26}\n", "", "Conversation", "Utterance");
  s += fmt::format("{:<10} | {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8}\n", "dataset", "train", "val",
                   "test", "train", "val", "test");
  s += fmt::format("{:<10} | {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8}\n", dataset_name,
                   grouped(get(Split::train).conversations),
                   grouped(get(Split::validation).conversations),
                   grouped(get(Split::test).conversations), grouped(get(Split::train).utterances),
                   grouped(get(Split::validation).utterances), grouped(get(Split::test).utterances));
  return s;
}

}  // namespace cisper
