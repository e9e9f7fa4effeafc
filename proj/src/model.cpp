#include "cisper/model.hpp"

#include <fmt/format.h>

#include "cisper/error.hpp"

namespace cisper {

TransformerMlmConfig plm_config(const RunConfig& config) {
  TransformerMlmConfig c;
  c.hidden = config.prompt_dim;
  c.layers = config.plm_layers;
  c.heads = nn::compatible_heads(config.prompt_dim, config.plm_heads);
  c.ff = config.plm_ff_multiplier * config.prompt_dim;
  c.max_length = config.plm_max_length;
  return c;
}

CisperModel::CisperModel(const RunConfig& config, Vocabulary vocab, std::vector<std::string> labels,
                         std::map<std::string, std::string> thesaurus)
    : config_(config), plan_(config.plan_config()) {
  config_.validate();
  if (vocab.reserved_count() < config_.prompt_config().tokens_per_utterance()) {
    throw ConfigError(fmt::format("vocabulary reserves {} pseudo-token ids but {} are needed",
                                  vocab.reserved_count(),
                                  config_.prompt_config().tokens_per_utterance()));
  }
  if (config_.semantic_shared_plm && config_.plm_layers < 3) {
    throw ConfigError("semantic_shared_plm needs plm_layers >= 3 (four pooled hidden states)");
  }
  prompts_ = std::make_unique<PromptGenerator>(config_.prompt_config(), config_.seed);
  plm_ = std::make_unique<TransformerMaskedLm>(std::move(vocab), plm_config(config_),
                                               config_.seed ^ 0x9e3779b97f4a7c15ULL);
  verbalizer_ = build_verbalizer(labels, config_.label_words, plm_->tokenizer(), thesaurus);
}

TokenPlan CisperModel::plan_for(const Utterance& utterance) const {
  return assemble_input(utterance, plm_->tokenizer(), plan_);
}

ConversationFeatures CisperModel::effective_features(const Conversation& conversation,
                                                     const ConversationFeatures& features) const {
  if (features.length() != static_cast<int>(conversation.size())) {
    throw ShapeError(fmt::format("conversation {} has {} utterances but features cover {}",
                                 conversation.id, conversation.size(), features.length()));
  }
  if (!config_.semantic_shared_plm) return features;
  ConversationFeatures out = features;
  MaskedLmSemanticBackend live(*plm_);
  out.semantic = encode_semantics_batch(conversation.utterances, live);
  return out;
}

std::vector<ag::Expr> CisperModel::log_probabilities(ag::Graph& g, const Conversation& conversation,
                                                     const ConversationFeatures& features) const {
  const ConversationFeatures feats = effective_features(conversation, features);
  std::vector<ag::Expr> bundles;
  if (config_.mode != PromptMode::fixed_template) bundles = prompts_->generate(g, feats, config_.mode);
  std::vector<ag::Expr> out;
  out.reserve(conversation.size());
  for (std::size_t t = 0; t < conversation.size(); ++t) {
    const TokenPlan plan = plan_for(conversation.utterances[t]);
    const ag::Expr bundle = bundles.empty() ? ag::Expr{} : bundles[t];
    const ag::Expr emb = inject_embeddings(g, plan, bundle, *plm_, plan_.speaker_tokens,
                                           plan_.listener_tokens);
    out.push_back(mask_log_probabilities(g, emb, *plm_, plan.mask_position));
  }
  return out;
}

ag::Expr CisperModel::conversation_nll(ag::Graph& g, const Conversation& conversation,
                                       const ConversationFeatures& features, int* count) const {
  const auto logp = log_probabilities(g, conversation, features);
  std::vector<ag::Expr> terms;
  for (std::size_t t = 0; t < conversation.size(); ++t) {
    const auto& emotion = conversation.utterances[t].emotion;
    if (!emotion) continue;
    terms.push_back(ag::pick(logp[t], 0, verbalizer_.token_id(*emotion)));
  }
  if (count) *count = static_cast<int>(terms.size());
  if (terms.empty()) return g.constant(Matrix::Zero(1, 1));
  return ag::scale(ag::sum(ag::concat_cols(terms)), -1.0);
}

std::vector<MaskDistribution> CisperModel::predict(const Conversation& conversation,
                                                   const ConversationFeatures& features) const {
  ag::Graph g;
  std::vector<MaskDistribution> out;
  for (const auto& lp : log_probabilities(g, conversation, features)) {
    out.push_back({lp.value().row(0).transpose().array().exp().matrix()});
  }
  return out;
}

std::vector<std::string> CisperModel::classify(const Conversation& conversation,
                                               const ConversationFeatures& features,
                                               ClassifyMode mode) const {
  std::vector<std::string> out;
  for (const auto& d : predict(conversation, features)) {
    out.push_back(classify_utterance(d, verbalizer_, mode));
  }
  return out;
}

std::vector<Parameter*> CisperModel::trainable_parameters() {
  auto out = prompts_->trainable_parameters(config_.mode);
  if (config_.tune_plm) {
    for (Parameter* p : plm_->parameters().all()) out.push_back(p);
  }
  return out;
}

std::vector<Parameter*> CisperModel::all_parameters() {
  auto out = prompts_->parameters().all();
  for (Parameter* p : plm_->parameters().all()) out.push_back(p);
  return out;
}

std::map<std::string, Matrix> CisperModel::snapshot() const {
  auto out = prompts_->parameters().snapshot();
  out.merge(plm_->parameters().snapshot());
  return out;
}

void CisperModel::restore(const std::map<std::string, Matrix>& values) {
  prompts_->parameters().restore(values);
  plm_->parameters().restore(values);
}

}  // namespace cisper
