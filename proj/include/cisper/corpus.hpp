#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cisper {

struct Utterance {
  std::string conversation_id;
  int index = 0;
  std::string speaker;
  std::string text;
  std::optional<std::string> emotion;

  bool operator==(const Utterance&) const = default;
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;

  std::size_t size() const { return utterances.size(); }
  bool operator==(const Conversation&) const = default;
};

enum class Split { train, validation, test };

std::string_view to_string(Split s);
Split parse_split(std::string_view name);

enum class DatasetFormat { meld_csv, emorynlp_json, generic_jsonl };

DatasetFormat parse_format(std::string_view name);
std::string_view to_string(DatasetFormat f);

struct Corpus {
  std::vector<Conversation> conversations;
  std::vector<std::string> labels;  // first-seen order
  Split split = Split::train;

  std::size_t utterance_count() const;
  const Conversation& conversation(std::string_view id) const;
  bool operator==(const Corpus&) const = default;
};

// Loads a corpus file. Conversations are ordered by id (numeric ids compare
// numerically), utterances by index. Emotion strings are trimmed and
// lower-cased. Throws DatasetError on malformed data and ConfigError on an
// unknown format name.
Corpus load_dataset(const std::filesystem::path& path, std::string_view format,
                    Split split = Split::train);
Corpus load_dataset(const std::filesystem::path& path, DatasetFormat format,
                    Split split = Split::train);

// Builds a corpus from loose utterances, validating index contiguity.
Corpus assemble_corpus(std::vector<Utterance> utterances, Split split, std::string_view source);

// Writes the canonical line-delimited format read by the generic-jsonl adapter.
void write_jsonl(const Corpus& corpus, const std::filesystem::path& path);

// Ordered emotion categories; throws DatasetError when nothing is labeled.
std::vector<std::string> label_set(const Corpus& corpus);

// Union of label sets in split order train, validation, test. A label that
// only occurs outside the training split is rejected.
std::vector<std::string> union_label_set(const std::map<Split, const Corpus*>& splits);

struct SplitCounts {
  std::size_t conversations = 0;
  std::size_t utterances = 0;
  bool operator==(const SplitCounts&) const = default;
};

struct SplitReport {
  std::map<Split, SplitCounts> counts;

  // Table 2 style: one row, conversation counts then utterance counts.
  std::string format_table(std::string_view dataset_name) const;
};

SplitReport split_counts(const std::map<Split, const Corpus*>& splits);

std::string normalize_emotion(std::string_view raw);

}  // namespace cisper
