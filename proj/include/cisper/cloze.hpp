#pragma once

// Cloze-style emotion prediction: the utterance is wrapped with pseudo tokens
// and a [MASK], pseudo-token embeddings are replaced by generated prompts,
// and the masked position's word distribution is decoded through a
// verbalizer into an emotion category.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cisper/corpus.hpp"
#include "cisper/graph.hpp"
#include "cisper/masked_lm.hpp"
#include "cisper/promptgen.hpp"
#include "cisper/tokenizer.hpp"

namespace cisper {

class Verbalizer {
 public:
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::string>& label_words() const { return words_; }
  const std::vector<int>& token_ids() const { return token_ids_; }
  const std::map<std::string, std::string>& thesaurus() const { return thesaurus_; }

  int label_index(std::string_view category) const;
  int token_id(std::string_view category) const { return token_ids_.at(static_cast<std::size_t>(label_index(category))); }
  // Category of a single vocabulary id via canonical words or the thesaurus.
  std::optional<std::string> category_of_token(int id) const;

  friend Verbalizer build_verbalizer(const std::vector<std::string>& label_set,
                                     const std::map<std::string, std::string>& word_overrides,
                                     const WordPieceTokenizer& tokenizer,
                                     const std::map<std::string, std::string>& thesaurus);

 private:
  std::vector<std::string> labels_;
  std::vector<std::string> words_;
  std::vector<int> token_ids_;
  std::map<std::string, std::string> thesaurus_;
  std::unordered_map<int, int> id_to_label_;
};

// Canonical label word defaults to the category name; every canonical word
// must be a single vocabulary token. Thesaurus entries that are not single
// tokens are kept but can never be the argmax word.
Verbalizer build_verbalizer(const std::vector<std::string>& label_set,
                            const std::map<std::string, std::string>& word_overrides,
                            const WordPieceTokenizer& tokenizer,
                            const std::map<std::string, std::string>& thesaurus = {});

// Line-delimited "word<TAB>category"; blank lines and '#' comments ignored.
std::map<std::string, std::string> load_thesaurus(const std::filesystem::path& path);

enum class TokenRole { cls, e_left, p_left, mask, word, p_right, e_right, sep, template_word };
std::string_view to_string(TokenRole role);

enum class PlanLayout { symmetric, left, right, fixed_template };
enum class SidePolicy { relocate, halve };

PlanLayout layout_for(PromptMode mode);

struct PlanConfig {
  int speaker_tokens = 3;
  int listener_tokens = 3;
  PlanLayout layout = PlanLayout::symmetric;
  // One-sided layouts either carry all 2(N_e+N_p) tokens (relocate) or only
  // that side's N_e+N_p tokens (halve).
  SidePolicy side_policy = SidePolicy::relocate;
  int max_length = 512;
};

struct PseudoSlot {
  TokenRole group;
  int index;  // position within its group
};

struct TokenPlan {
  std::vector<int> ids;
  std::vector<TokenRole> roles;
  int mask_position = -1;
  int word_count = 0;
  std::map<int, PseudoSlot> pseudo_slots;

  int length() const { return static_cast<int>(ids.size()); }
};

inline const char* const kFixedTemplate = "my emotion is";

// Builds the input layout around already tokenized words, truncating the
// word segment from the right when the plan would exceed max_length.
TokenPlan assemble_tokens(std::span<const int> word_ids, const WordPieceTokenizer& tokenizer,
                          const PlanConfig& config);
TokenPlan assemble_input(const Utterance& utterance, const WordPieceTokenizer& tokenizer,
                         const PlanConfig& config);

// Row of the stacked bundle (e_l, p_l, p_r, e_r) that feeds a pseudo slot.
int bundle_row(const PseudoSlot& slot, int speaker_tokens, int listener_tokens);

// `bundle` holds the stacked prompt rows; pass an empty Expr (graph == nullptr)
// for plans without pseudo tokens.
ag::Expr inject_embeddings(ag::Graph& g, const TokenPlan& plan, ag::Expr bundle,
                           const MaskedLanguageModel& lm, int speaker_tokens, int listener_tokens);
Matrix inject_embeddings(const TokenPlan& plan, const PromptBundle& bundle,
                         const MaskedLanguageModel& lm);

struct MaskDistribution {
  Vector probabilities;  // over the whole vocabulary
};

// 1 x |V| log-probabilities at the mask position.
ag::Expr mask_log_probabilities(ag::Graph& g, ag::Expr embeddings, const MaskedLanguageModel& lm,
                                int mask_position);
MaskDistribution predict_mask_distribution(const Matrix& embeddings, const MaskedLanguageModel& lm,
                                           int mask_position);

enum class ClassifyMode { restricted, open };
ClassifyMode parse_classify_mode(std::string_view name);

std::string classify_utterance(const MaskDistribution& dist, const Verbalizer& verbalizer,
                               ClassifyMode mode = ClassifyMode::restricted);

}  // namespace cisper
