#include "cisper/fixture.hpp"

#include <set>

#include "cisper/error.hpp"

namespace cisper {

namespace {

struct Opener {
  const char* text;
  const char* emotion;
};

constexpr Opener kOpeners[] = {
    {"i feel so happy today", "joy"},
    {"what a wonderful party", "joy"},
    {"i miss my old friend", "sadness"},
    {"the rain makes me lonely", "sadness"},
    {"you broke my new phone", "anger"},
    {"stop shouting at me now", "anger"},
};

constexpr const char* kFiller[] = {"okay", "i see", "really", "tell me more", "yes", "go on"};

struct Script {
  int opener;
  std::vector<int> filler;
};

// opener index, filler indices
const std::vector<Script>& scripts(Split split) {
  static const std::vector<Script> train = {
      {0, {0, 1, 2}}, {2, {0, 1, 2}}, {4, {0, 1, 2}}, {1, {3, 4}},
      {3, {3, 4}},    {5, {3, 4}},    {0, {5, 2}},    {3, {5, 0}},
  };
  static const std::vector<Script> validation = {
      {1, {0, 2}}, {2, {4, 5}}, {5, {1, 3}}, {4, {2, 4}},
  };
  static const std::vector<Script> test = {
      {0, {4, 3}}, {3, {1, 2}}, {4, {5, 3}}, {2, {2, 0}},
  };
  switch (split) {
    case Split::train: return train;
    case Split::validation: return validation;
    case Split::test: return test;
  }
  return train;
}

constexpr const char* kExtraWords[] = {
    "fear",  "disgust", "neutral", "surprise", "calm",  "maybe", "later", "home",  "work",
    "sure",  "well",    "fine",    "no",       "please", "thanks", "sorry", "great", "bad",
    "good",  "day",     "night",   "time",     "here",  "there", "we",    "they",  "it",
    "this",  "that",    "was",     "very",     "not",   "all",   "every", "think", "know",
    "want",  "need",    "like",    "love",
};

}  // namespace

RunConfig toy_config() {
  RunConfig c;
  c.dataset = "toy";
  c.learning_rate = 1e-2;
  c.semantic_dim = 8;
  c.commonsense_dim = 8;
  c.prompt_dim = 16;
  c.blend_heads = 2;
  c.blend_ff_multiplier = 2;
  c.max_conversation_length = 16;
  c.plm_layers = 2;
  c.plm_heads = 2;
  c.plm_ff_multiplier = 2;
  c.plm_max_length = 40;
  c.vocab_size = 64;
  c.epochs = 200;
  c.patience = 0;
  c.seed = 1;
  return c;
}

Corpus toy_corpus(Split split) {
  std::vector<Utterance> utts;
  int conv = 0;
  const int base = split == Split::train ? 0 : split == Split::validation ? 100 : 200;
  for (const auto& s : scripts(split)) {
    const std::string id = std::to_string(base + conv++);
    const Opener& o = kOpeners[s.opener];
    int index = 0;
    utts.push_back({id, index++, "A", o.text, std::string(o.emotion)});
    for (std::size_t k = 0; k < s.filler.size(); ++k) {
      utts.push_back({id, index++, k % 2 == 0 ? "B" : "A", kFiller[s.filler[k]],
                      std::string(o.emotion)});
    }
  }
  return assemble_corpus(std::move(utts), split, "toy fixture");
}

Vocabulary toy_vocabulary(int reserved) {
  std::vector<std::string> words;
  std::set<std::string> seen;
  auto add = [&](std::string_view text) {
    for (auto& w : basic_split(text)) {
      if (seen.insert(w).second) words.push_back(w);
    }
  };
  for (const auto& o : kOpeners) {
    add(o.text);
    add(o.emotion);
  }
  for (const char* f : kFiller) add(f);
  add(kFixedTemplate);
  for (const char* w : kExtraWords) {
    if (words.size() >= 64) break;
    add(w);
  }
  if (words.size() != 64) throw ConfigError("toy vocabulary must hold exactly 64 words");
  return Vocabulary(words, reserved);
}

ExperimentData toy_experiment(const RunConfig& config) {
  ExperimentData d;
  d.train = toy_corpus(Split::train);
  d.validation = toy_corpus(Split::validation);
  d.test = toy_corpus(Split::test);
  d.labels = d.train.labels;
  d.vocabulary = toy_vocabulary(config.reserved_tokens);
  const auto backends = reference_backend(config.semantic_dim, config.commonsense_dim, config.feature_seed);
  d.train_features = extract_corpus_features(d.train, *backends.semantic, *backends.commonsense);
  d.validation_features = extract_corpus_features(d.validation, *backends.semantic, *backends.commonsense);
  d.test_features = extract_corpus_features(d.test, *backends.semantic, *backends.commonsense);
  return d;
}

}  // namespace cisper
