#include "cisper/cloze.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "cisper/error.hpp"

namespace cisper {

int Verbalizer::label_index(std::string_view category) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == category) return static_cast<int>(i);
  }
  throw VerbalizerError(fmt::format("category '{}' is not in the verbalizer", category));
}

std::optional<std::string> Verbalizer::category_of_token(int id) const {
  auto it = id_to_label_.find(id);
  if (it == id_to_label_.end()) return std::nullopt;
  return labels_[static_cast<std::size_t>(it->second)];
}

Verbalizer build_verbalizer(const std::vector<std::string>& label_set,
                            const std::map<std::string, std::string>& word_overrides,
                            const WordPieceTokenizer& tokenizer,
                            const std::map<std::string, std::string>& thesaurus) {
  if (label_set.empty()) throw VerbalizerError("cannot build a verbalizer without labels");
  for (const auto& [cat, word] : word_overrides) {
    if (std::find(label_set.begin(), label_set.end(), cat) == label_set.end()) {
      throw VerbalizerError(fmt::format("label-word override for unknown category '{}'", cat));
    }
  }
  Verbalizer v;
  v.labels_ = label_set;
  std::vector<std::string> offending;
  std::set<std::string> seen;
  for (const auto& cat : label_set) {
    auto it = word_overrides.find(cat);
    const std::string word = it != word_overrides.end() ? it->second : cat;
    if (!seen.insert(word).second) {
      throw VerbalizerError(fmt::format("label word '{}' is used by more than one category", word));
    }
    const auto pieces = tokenizer.encode(word);
    if (pieces.size() != 1 || pieces[0] == Vocabulary::kUnk) {
      offending.push_back(fmt::format("{} -> '{}' ({} pieces{})", cat, word, pieces.size(),
                                      pieces.size() == 1 ? ", unknown" : ""));
      continue;
    }
    v.words_.push_back(word);
    v.token_ids_.push_back(pieces[0]);
  }
  if (!offending.empty()) {
    throw VerbalizerError(fmt::format(
        "label words must be single vocabulary tokens: {}; set label_word.<category> overrides",
        fmt::join(offending, "; ")));
  }
  for (std::size_t i = 0; i < v.token_ids_.size(); ++i) {
    v.id_to_label_.emplace(v.token_ids_[i], static_cast<int>(i));
  }
  for (const auto& [word, cat] : thesaurus) {
    const auto label = std::find(label_set.begin(), label_set.end(), cat);
    if (label == label_set.end()) {
      throw VerbalizerError(fmt::format("thesaurus maps '{}' to unknown category '{}'", word, cat));
    }
    v.thesaurus_.emplace(word, cat);
    const auto pieces = tokenizer.encode(word);
    if (pieces.size() == 1 && pieces[0] != Vocabulary::kUnk) {
      v.id_to_label_.try_emplace(pieces[0], static_cast<int>(label - label_set.begin()));
    } else {
      spdlog::debug("thesaurus word '{}' is not a single token and cannot be predicted", word);
    }
  }
  return v;
}

std::map<std::string, std::string> load_thesaurus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open thesaurus {}", path.string()));
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected word<TAB>category", path.string(), lineno));
    }
    out[line.substr(0, tab)] = normalize_emotion(line.substr(tab + 1));
  }
  return out;
}

std::string_view to_string(TokenRole role) {
  switch (role) {
    case TokenRole::cls: return "CLS";
    case TokenRole::e_left: return "E_l";
    case TokenRole::p_left: return "P_l";
    case TokenRole::mask: return "MASK";
    case TokenRole::word: return "WORD";
    case TokenRole::p_right: return "P_r";
    case TokenRole::e_right: return "E_r";
    case TokenRole::sep: return "SEP";
    case TokenRole::template_word: return "TEMPLATE";
  }
  return "?";
}

PlanLayout layout_for(PromptMode mode) {
  switch (mode) {
    case PromptMode::left: return PlanLayout::left;
    case PromptMode::right: return PlanLayout::right;
    case PromptMode::fixed_template: return PlanLayout::fixed_template;
    default: return PlanLayout::symmetric;
  }
}

int bundle_row(const PseudoSlot& slot, int ne, int np) {
  switch (slot.group) {
    case TokenRole::e_left: return slot.index;
    case TokenRole::p_left: return ne + slot.index;
    case TokenRole::p_right: return ne + np + slot.index;
    case TokenRole::e_right: return ne + 2 * np + slot.index;
    default: throw InjectionError(fmt::format("role {} is not a pseudo token", to_string(slot.group)));
  }
}

namespace {

class PlanWriter {
 public:
  PlanWriter(TokenPlan& plan, const Vocabulary& vocab, int ne, int np)
      : plan_(plan), vocab_(vocab), ne_(ne), np_(np) {}

  void special(TokenRole role, int id) {
    if (role == TokenRole::mask) plan_.mask_position = plan_.length();
    plan_.ids.push_back(id);
    plan_.roles.push_back(role);
  }
  void pseudo(TokenRole group, int count) {
    for (int k = 0; k < count; ++k) {
      const PseudoSlot slot{group, k};
      plan_.pseudo_slots.emplace(plan_.length(), slot);
      plan_.ids.push_back(vocab_.reserved_id(bundle_row(slot, ne_, np_)));
      plan_.roles.push_back(group);
    }
  }
  void words(std::span<const int> ids, TokenRole role = TokenRole::word) {
    for (int id : ids) {
      plan_.ids.push_back(id);
      plan_.roles.push_back(role);
    }
  }

 private:
  TokenPlan& plan_;
  const Vocabulary& vocab_;
  int ne_, np_;
};

}  // namespace

TokenPlan assemble_tokens(std::span<const int> word_ids, const WordPieceTokenizer& tokenizer,
                          const PlanConfig& config) {
  const int ne = config.speaker_tokens;
  const int np = config.listener_tokens;
  if (ne < 1 || np < 1) throw ConfigError("N_e and N_p must be >= 1");
  const bool one_sided = config.layout == PlanLayout::left || config.layout == PlanLayout::right;
  const bool halve = one_sided && config.side_policy == SidePolicy::halve;

  std::vector<int> template_ids;
  int overhead = 3;
  if (config.layout == PlanLayout::fixed_template) {
    template_ids = tokenizer.encode(kFixedTemplate);
    overhead += static_cast<int>(template_ids.size());
  } else {
    overhead += halve ? (ne + np) : 2 * (ne + np);
  }
  std::size_t k = word_ids.size();
  if (static_cast<int>(k) + overhead > config.max_length) {
    const int room = config.max_length - overhead;
    if (room < 1) {
      throw InputTooLongError(fmt::format(
          "prompt layout needs {} positions; max length {} leaves no room for words", overhead,
          config.max_length));
    }
    spdlog::warn("utterance of {} tokens truncated to {} to fit max length {}", k, room,
                 config.max_length);
    k = static_cast<std::size_t>(room);
  }
  if (k == 0) throw InputTooLongError("utterance has no tokens");
  const auto words = word_ids.first(k);

  TokenPlan plan;
  plan.word_count = static_cast<int>(k);
  PlanWriter w(plan, tokenizer.vocabulary(), ne, np);
  w.special(TokenRole::cls, Vocabulary::kCls);
  switch (config.layout) {
    case PlanLayout::symmetric:
      w.pseudo(TokenRole::e_left, ne);
      w.pseudo(TokenRole::p_left, np);
      w.special(TokenRole::mask, Vocabulary::kMask);
      w.words(words);
      w.pseudo(TokenRole::p_right, np);
      w.pseudo(TokenRole::e_right, ne);
      break;
    case PlanLayout::left:
      w.pseudo(TokenRole::e_left, ne);
      w.pseudo(TokenRole::p_left, np);
      if (!halve) {
        w.pseudo(TokenRole::p_right, np);
        w.pseudo(TokenRole::e_right, ne);
      }
      w.special(TokenRole::mask, Vocabulary::kMask);
      w.words(words);
      break;
    case PlanLayout::right:
      w.special(TokenRole::mask, Vocabulary::kMask);
      w.words(words);
      if (!halve) {
        w.pseudo(TokenRole::e_left, ne);
        w.pseudo(TokenRole::p_left, np);
      }
      w.pseudo(TokenRole::p_right, np);
      w.pseudo(TokenRole::e_right, ne);
      break;
    case PlanLayout::fixed_template:
      w.words(words);
      w.words(template_ids, TokenRole::template_word);
      w.special(TokenRole::mask, Vocabulary::kMask);
      break;
  }
  w.special(TokenRole::sep, Vocabulary::kSep);
  return plan;
}

TokenPlan assemble_input(const Utterance& utterance, const WordPieceTokenizer& tokenizer,
                         const PlanConfig& config) {
  const auto ids = tokenizer.encode(utterance.text);
  if (ids.empty()) {
    throw InputTooLongError(fmt::format("conversation {} utterance {} has no tokens",
                                        utterance.conversation_id, utterance.index));
  }
  return assemble_tokens(ids, tokenizer, config);
}

ag::Expr inject_embeddings(ag::Graph& g, const TokenPlan& plan, ag::Expr bundle,
                           const MaskedLanguageModel& lm, int ne, int np) {
  const ag::Expr looked_up = lm.embed_tokens(g, plan.ids);
  if (plan.pseudo_slots.empty()) return looked_up;
  if (bundle.graph == nullptr) {
    throw InjectionError("plan has pseudo tokens but no prompt bundle was supplied");
  }
  if (bundle.cols() != looked_up.cols()) {
    throw InjectionError(fmt::format("prompt width {} differs from the model's embedding width {}",
                                     bundle.cols(), looked_up.cols()));
  }
  std::vector<ag::Expr> segments;
  int run_start = 0;
  auto flush = [&](int end) {
    if (end > run_start) segments.push_back(ag::slice_rows(looked_up, run_start, end - run_start));
  };
  for (const auto& [pos, slot] : plan.pseudo_slots) {
    const int row = bundle_row(slot, ne, np);
    if (row < 0 || row >= bundle.rows()) {
      throw InjectionError(fmt::format("position {} ({} #{}) has no prompt vector in a bundle of {}",
                                       pos, to_string(slot.group), slot.index, bundle.rows()));
    }
    flush(pos);
    segments.push_back(ag::slice_rows(bundle, row, 1));
    run_start = pos + 1;
  }
  flush(plan.length());
  return ag::concat_rows(segments);
}

Matrix inject_embeddings(const TokenPlan& plan, const PromptBundle& bundle,
                         const MaskedLanguageModel& lm) {
  const auto ne = static_cast<int>(bundle.e_left.rows());
  const auto np = static_cast<int>(bundle.p_left.rows());
  if (bundle.e_right.rows() != ne || bundle.p_right.rows() != np) {
    throw InjectionError("bundle groups have inconsistent sizes");
  }
  for (const auto& [pos, slot] : plan.pseudo_slots) {
    const int limit = slot.group == TokenRole::e_left || slot.group == TokenRole::e_right ? ne : np;
    if (slot.index >= limit) {
      throw InjectionError(fmt::format("position {} needs {} #{} but the bundle group has {}", pos,
                                       to_string(slot.group), slot.index, limit));
    }
  }
  ag::Graph g;
  ag::Expr stacked{};
  if (!plan.pseudo_slots.empty()) stacked = g.constant(bundle.stacked());
  return inject_embeddings(g, plan, stacked, lm, ne, np).value();
}

ag::Expr mask_log_probabilities(ag::Graph& g, ag::Expr embeddings, const MaskedLanguageModel& lm,
                                int mask_position) {
  if (mask_position < 0 || mask_position >= embeddings.rows()) {
    throw ShapeError(fmt::format("mask position {} outside sequence of {}", mask_position,
                                 embeddings.rows()));
  }
  const auto states = lm.encode(g, embeddings);
  return ag::log_softmax_rows(lm.lm_head(g, states.back(), mask_position));
}

MaskDistribution predict_mask_distribution(const Matrix& embeddings, const MaskedLanguageModel& lm,
                                           int mask_position) {
  ag::Graph g;
  const ag::Expr logp = mask_log_probabilities(g, g.constant(embeddings), lm, mask_position);
  return {logp.value().row(0).transpose().array().exp().matrix()};
}

ClassifyMode parse_classify_mode(std::string_view name) {
  if (name == "restricted") return ClassifyMode::restricted;
  if (name == "open") return ClassifyMode::open;
  throw ConfigError(fmt::format("unknown classify mode '{}' (expected restricted or open)", name));
}

std::string classify_utterance(const MaskDistribution& dist, const Verbalizer& verbalizer,
                               ClassifyMode mode) {
  const Vector& p = dist.probabilities;
  if (mode == ClassifyMode::open) {
    Eigen::Index best = 0;
    p.maxCoeff(&best);
    if (auto cat = verbalizer.category_of_token(static_cast<int>(best))) return *cat;
  }
  const auto& ids = verbalizer.token_ids();
  std::size_t best = 0;
  for (std::size_t i = 1; i < ids.size(); ++i) {
    if (p(ids[i]) > p(ids[best])) best = i;
  }
  return verbalizer.labels()[best];
}

}  // namespace cisper
