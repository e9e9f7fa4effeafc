#include "cisper/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "cisper/encoders.hpp"
#include "cisper/error.hpp"

namespace cisper {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const std::string v = trim(value);
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError(fmt::format("{}: '{}' is not a valid number", key, value));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  const std::string v = trim(value);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, value));
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<int> parse_int_list(std::string_view key, std::string_view value) {
  std::vector<int> out;
  std::string item;
  std::stringstream ss{std::string(value)};
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_number<int>(key, item));
  }
  return out;
}

constexpr std::string_view kLabelWordPrefix = "label_word.";

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"learning_rate", "ADAM learning rate (> 0)"},
      {"weight_decay", "decoupled weight decay"},
      {"adam_beta1", "ADAM first-moment decay"},
      {"adam_beta2", "ADAM second-moment decay"},
      {"adam_epsilon", "ADAM denominator epsilon"},
      {"batch_size", "utterances per optimizer step (gradients accumulate over whole conversations)"},
      {"epochs", "maximum training epochs"},
      {"patience", "epochs without validation improvement before stopping (0 disables)"},
      {"seed", "seed for parameter initialization and data order"},
      {"repeats", "runs per configuration in ablate/sweep, averaged"},
      {"mode", "full | random | left | right | context-only | commonsense-only | fixed-template"},
      {"tune_plm", "update masked-LM parameters together with the prompt generator"},
      {"n_e", "speaker pseudo tokens per side (N_e)"},
      {"n_p", "listener pseudo tokens per side (N_p)"},
      {"d_u", "semantic feature width"},
      {"d_c", "commonsense feature width"},
      {"d_t", "prompt / masked-LM embedding width (even)"},
      {"blend_layers", "Transformer layers in each blend encoder"},
      {"blend_heads", "attention heads in the blend encoders (reduced to a divisor of d_t)"},
      {"blend_ff_multiplier", "blend encoder feed-forward width as a multiple of d_t"},
      {"blend_positional", "learned position embeddings in the blend encoders"},
      {"max_conversation_length", "longest conversation the position table covers"},
      {"side_policy", "left/right variants: relocate (all tokens on one side) | halve"},
      {"classify_mode", "restricted (label words only) | open (full vocabulary + thesaurus)"},
      {"plm_layers", "masked-LM encoder layers"},
      {"plm_heads", "masked-LM attention heads"},
      {"plm_ff_multiplier", "masked-LM feed-forward width as a multiple of d_t"},
      {"plm_max_length", "masked-LM maximum sequence length"},
      {"vocab_size", "word budget when the vocabulary is built from the training split"},
      {"reserved_tokens", "[unusedN] ids reserved for pseudo tokens (>= 2(n_e+n_p))"},
      {"vocab_path", "fixed vocab.txt instead of building one"},
      {"thesaurus_path", "word<TAB>category synonyms for open classification"},
      {"label_word.<category>", "override the label word of one category"},
      {"semantic_backend", "reference | masked-lm"},
      {"commonsense_backend", "reference | masked-lm | precomputed"},
      {"semantic_shared_plm", "recompute semantic features with the live prediction model"},
      {"feature_seed", "seed of the reference feature backends"},
      {"dataset", "name used in reports"},
      {"adapter", "meld-csv | emorynlp-json | generic-jsonl"},
      {"train_path", "training split file"},
      {"validation_path", "validation split file"},
      {"test_path", "test split file"},
      {"cache_dir", "feature cache root (CISPER_CACHE_DIR overrides)"},
      {"out_dir", "directory for checkpoints, logs and reports"},
      {"sweep_values", "comma-separated N_e(=N_p) values for sweep"},
  };
  return keys;
}

void RunConfig::set(std::string_view key_in, std::string_view value_in) {
  const std::string key = trim(key_in);
  const std::string value = trim(value_in);
  if (key.rfind(kLabelWordPrefix, 0) == 0) {
    const std::string cat = normalize_emotion(key.substr(kLabelWordPrefix.size()));
    if (cat.empty()) throw ConfigError("label_word.<category> needs a category");
    label_words[cat] = value;
    return;
  }
  if (key == "learning_rate") learning_rate = parse_number<double>(key, value);
  else if (key == "weight_decay") weight_decay = parse_number<double>(key, value);
  else if (key == "adam_beta1") adam_beta1 = parse_number<double>(key, value);
  else if (key == "adam_beta2") adam_beta2 = parse_number<double>(key, value);
  else if (key == "adam_epsilon") adam_epsilon = parse_number<double>(key, value);
  else if (key == "batch_size") batch_size = parse_number<int>(key, value);
  else if (key == "epochs") epochs = parse_number<int>(key, value);
  else if (key == "patience") patience = parse_number<int>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "repeats") repeats = parse_number<int>(key, value);
  else if (key == "mode") mode = parse_prompt_mode(value);
  else if (key == "tune_plm") tune_plm = parse_bool(key, value);
  else if (key == "n_e") speaker_tokens = parse_number<int>(key, value);
  else if (key == "n_p") listener_tokens = parse_number<int>(key, value);
  else if (key == "d_u") semantic_dim = parse_number<int>(key, value);
  else if (key == "d_c") commonsense_dim = parse_number<int>(key, value);
  else if (key == "d_t") prompt_dim = parse_number<int>(key, value);
  else if (key == "blend_layers") blend_layers = parse_number<int>(key, value);
  else if (key == "blend_heads") blend_heads = parse_number<int>(key, value);
  else if (key == "blend_ff_multiplier") blend_ff_multiplier = parse_number<int>(key, value);
  else if (key == "blend_positional") blend_positional = parse_bool(key, value);
  else if (key == "max_conversation_length") max_conversation_length = parse_number<int>(key, value);
  else if (key == "side_policy") {
    if (value == "relocate") side_policy = SidePolicy::relocate;
    else if (value == "halve") side_policy = SidePolicy::halve;
    else throw ConfigError(fmt::format("side_policy: '{}' (expected relocate or halve)", value));
  } else if (key == "classify_mode") classify_mode = parse_classify_mode(value);
  else if (key == "plm_layers") plm_layers = parse_number<int>(key, value);
  else if (key == "plm_heads") plm_heads = parse_number<int>(key, value);
  else if (key == "plm_ff_multiplier") plm_ff_multiplier = parse_number<int>(key, value);
  else if (key == "plm_max_length") plm_max_length = parse_number<int>(key, value);
  else if (key == "vocab_size") vocab_size = parse_number<int>(key, value);
  else if (key == "reserved_tokens") reserved_tokens = parse_number<int>(key, value);
  else if (key == "vocab_path") vocab_path = value;
  else if (key == "thesaurus_path") thesaurus_path = value;
  else if (key == "semantic_backend") semantic_backend = value;
  else if (key == "commonsense_backend") commonsense_backend = value;
  else if (key == "semantic_shared_plm") semantic_shared_plm = parse_bool(key, value);
  else if (key == "feature_seed") feature_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "dataset") dataset = value;
  else if (key == "adapter") adapter = value;
  else if (key == "train_path") train_path = value;
  else if (key == "validation_path") validation_path = value;
  else if (key == "test_path") test_path = value;
  else if (key == "cache_dir") cache_dir = value;
  else if (key == "out_dir") out_dir = value;
  else if (key == "sweep_values") sweep_values = parse_int_list(key, value);
  else throw ConfigError(fmt::format("unknown configuration key '{}'", key));
}

std::string RunConfig::get(std::string_view key) const {
  for (const auto& [k, v] : entries()) {
    if (k == key) return v;
  }
  throw ConfigError(fmt::format("unknown configuration key '{}'", key));
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> e = {
      {"learning_rate", fmt_double(learning_rate)},
      {"weight_decay", fmt_double(weight_decay)},
      {"adam_beta1", fmt_double(adam_beta1)},
      {"adam_beta2", fmt_double(adam_beta2)},
      {"adam_epsilon", fmt_double(adam_epsilon)},
      {"batch_size", std::to_string(batch_size)},
      {"epochs", std::to_string(epochs)},
      {"patience", std::to_string(patience)},
      {"seed", std::to_string(seed)},
      {"repeats", std::to_string(repeats)},
      {"mode", std::string(to_string(mode))},
      {"tune_plm", tune_plm ? "true" : "false"},
      {"n_e", std::to_string(speaker_tokens)},
      {"n_p", std::to_string(listener_tokens)},
      {"d_u", std::to_string(semantic_dim)},
      {"d_c", std::to_string(commonsense_dim)},
      {"d_t", std::to_string(prompt_dim)},
      {"blend_layers", std::to_string(blend_layers)},
      {"blend_heads", std::to_string(blend_heads)},
      {"blend_ff_multiplier", std::to_string(blend_ff_multiplier)},
      {"blend_positional", blend_positional ? "true" : "false"},
      {"max_conversation_length", std::to_string(max_conversation_length)},
      {"side_policy", side_policy == SidePolicy::relocate ? "relocate" : "halve"},
      {"classify_mode", classify_mode == ClassifyMode::restricted ? "restricted" : "open"},
      {"plm_layers", std::to_string(plm_layers)},
      {"plm_heads", std::to_string(plm_heads)},
      {"plm_ff_multiplier", std::to_string(plm_ff_multiplier)},
      {"plm_max_length", std::to_string(plm_max_length)},
      {"vocab_size", std::to_string(vocab_size)},
      {"reserved_tokens", std::to_string(reserved_tokens)},
      {"vocab_path", vocab_path},
      {"thesaurus_path", thesaurus_path},
      {"semantic_backend", semantic_backend},
      {"commonsense_backend", commonsense_backend},
      {"semantic_shared_plm", semantic_shared_plm ? "true" : "false"},
      {"feature_seed", std::to_string(feature_seed)},
      {"dataset", dataset},
      {"adapter", adapter},
      {"train_path", train_path},
      {"validation_path", validation_path},
      {"test_path", test_path},
      {"cache_dir", cache_dir},
      {"out_dir", out_dir},
      {"sweep_values", join_ints(sweep_values)},
  };
  for (const auto& [cat, word] : label_words) {
    e.emplace_back(std::string(kLabelWordPrefix) + cat, word);
  }
  return e;
}

std::string RunConfig::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : entries()) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::hash() const {
  return fmt::format("{:016x}", stable_hash(0, canonical_text()));
}

void RunConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must be in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (patience < 0) throw ConfigError("patience must be >= 0");
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (speaker_tokens < 1) throw ConfigError("n_e must be >= 1");
  if (listener_tokens < 1) throw ConfigError("n_p must be >= 1");
  if (prompt_dim < 2 || prompt_dim % 2 != 0) throw ConfigError("d_t must be a positive even number");
  if (semantic_dim < 1) throw ConfigError("d_u must be >= 1");
  if (commonsense_dim < 1) throw ConfigError("d_c must be >= 1");
  if (plm_layers < 1 || plm_heads < 1 || plm_ff_multiplier < 1) {
    throw ConfigError("plm_layers, plm_heads and plm_ff_multiplier must be >= 1");
  }
  if (plm_max_length < 3) throw ConfigError("plm_max_length must be >= 3");
  if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
  if (reserved_tokens < 2 * (speaker_tokens + listener_tokens)) {
    throw ConfigError(fmt::format("reserved_tokens must be >= 2(n_e+n_p) = {}",
                                  2 * (speaker_tokens + listener_tokens)));
  }
  if (semantic_backend != "reference" && semantic_backend != "masked-lm") {
    throw ConfigError(fmt::format("semantic_backend: '{}' (expected reference or masked-lm)",
                                  semantic_backend));
  }
  if (commonsense_backend != "reference" && commonsense_backend != "masked-lm" &&
      commonsense_backend != "precomputed") {
    throw ConfigError(fmt::format(
        "commonsense_backend: '{}' (expected reference, masked-lm or precomputed)",
        commonsense_backend));
  }
  if (semantic_shared_plm && semantic_dim != prompt_dim) {
    throw ConfigError("semantic_shared_plm requires d_u == d_t");
  }
  parse_format(adapter);
  for (int v : sweep_values) {
    if (v < 1) throw ConfigError("sweep_values entries must be >= 1");
  }
  prompt_config().validate();
}

PromptGenConfig RunConfig::prompt_config() const {
  PromptGenConfig c;
  c.semantic_dim = semantic_dim;
  c.commonsense_dim = commonsense_dim;
  c.prompt_dim = prompt_dim;
  c.speaker_tokens = speaker_tokens;
  c.listener_tokens = listener_tokens;
  c.encoder_layers = blend_layers;
  c.encoder_heads = blend_heads;
  c.ff_multiplier = blend_ff_multiplier;
  c.positional = blend_positional;
  c.max_conversation_length = max_conversation_length;
  return c;
}

PlanConfig RunConfig::plan_config() const {
  PlanConfig p;
  p.speaker_tokens = speaker_tokens;
  p.listener_tokens = listener_tokens;
  p.layout = layout_for(mode);
  p.side_policy = side_policy;
  p.max_length = plm_max_length;
  return p;
}

RunConfig RunConfig::from_entries(const std::vector<std::pair<std::string, std::string>>& kv) {
  RunConfig c;
  for (const auto& [k, v] : kv) c.set(k, v);
  return c;
}

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text,
                                                                  std::string_view source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value'", source, lineno));
    }
    out.emplace_back(trim(std::string_view(line).substr(0, eq)),
                     trim(std::string_view(line).substr(eq + 1)));
  }
  return out;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file {}", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return RunConfig::from_entries(parse_key_values(buf.str(), path.string()));
}

}  // namespace cisper
