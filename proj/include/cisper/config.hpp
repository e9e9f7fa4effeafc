#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cisper/cloze.hpp"
#include "cisper/promptgen.hpp"

namespace cisper {

// Every hyperparameter, mode flag and path of a run. Defaults are the
// full-scale settings (RoBERTa-large sized dims, ADAM at 5e-6 / 1e-2).
struct RunConfig {
  // optimization
  double learning_rate = 5e-6;
  double weight_decay = 1e-2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int batch_size = 64;  // utterances per optimizer step
  int epochs = 10;
  int patience = 3;
  std::uint64_t seed = 42;
  int repeats = 1;

  // model
  PromptMode mode = PromptMode::full;
  bool tune_plm = true;
  int speaker_tokens = 3;   // N_e
  int listener_tokens = 3;  // N_p
  int semantic_dim = 1024;  // d_u
  int commonsense_dim = 768;  // d_c
  int prompt_dim = 1024;    // d_T
  int blend_layers = 1;
  int blend_heads = 8;
  int blend_ff_multiplier = 4;
  bool blend_positional = true;
  int max_conversation_length = 128;
  SidePolicy side_policy = SidePolicy::relocate;
  ClassifyMode classify_mode = ClassifyMode::restricted;
  int plm_layers = 2;
  int plm_heads = 2;
  int plm_ff_multiplier = 4;
  int plm_max_length = 128;
  int vocab_size = 8000;
  int reserved_tokens = 20;
  std::string vocab_path;
  std::map<std::string, std::string> label_words;  // category -> word
  std::string thesaurus_path;

  // features
  std::string semantic_backend = "reference";     // reference | masked-lm
  std::string commonsense_backend = "reference";  // reference | masked-lm | precomputed
  bool semantic_shared_plm = false;
  std::uint64_t feature_seed = 7;

  // data & outputs
  std::string dataset = "custom";
  std::string adapter = "generic-jsonl";
  std::string train_path;
  std::string validation_path;
  std::string test_path;
  std::string cache_dir = "cache";
  std::string out_dir = "runs";
  std::vector<int> sweep_values = {1, 2, 3, 4, 5};

  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  void validate() const;

  // (key, value) pairs in a fixed order; label words as label_word.<category>.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string canonical_text() const;
  std::string hash() const;  // 16 hex digits of a stable hash of canonical_text()

  PromptGenConfig prompt_config() const;
  PlanConfig plan_config() const;

  static RunConfig from_entries(const std::vector<std::pair<std::string, std::string>>& kv);
};

struct ConfigKey {
  std::string_view name;
  std::string_view help;
};
const std::vector<ConfigKey>& config_keys();

// Flat "key = value" document; '#' starts a comment.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text,
                                                                  std::string_view source);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace cisper
