#pragma once

// Prompt generator + masked LM + verbalizer for one run configuration.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cisper/cloze.hpp"
#include "cisper/config.hpp"
#include "cisper/corpus.hpp"
#include "cisper/encoders.hpp"
#include "cisper/masked_lm.hpp"
#include "cisper/promptgen.hpp"

namespace cisper {

TransformerMlmConfig plm_config(const RunConfig& config);

class CisperModel {
 public:
  CisperModel(const RunConfig& config, Vocabulary vocab, std::vector<std::string> labels,
              std::map<std::string, std::string> thesaurus = {});
  CisperModel(const CisperModel&) = delete;
  CisperModel& operator=(const CisperModel&) = delete;

  const RunConfig& config() const { return config_; }
  PromptMode mode() const { return config_.mode; }
  const PlanConfig& plan_config() const { return plan_; }
  PromptGenerator& prompts() { return *prompts_; }
  const PromptGenerator& prompts() const { return *prompts_; }
  TransformerMaskedLm& plm() { return *plm_; }
  const TransformerMaskedLm& plm() const { return *plm_; }
  const Verbalizer& verbalizer() const { return verbalizer_; }
  const std::vector<std::string>& labels() const { return verbalizer_.labels(); }
  const Vocabulary& vocabulary() const { return plm_->vocabulary(); }
  const WordPieceTokenizer& tokenizer() const { return plm_->tokenizer(); }

  TokenPlan plan_for(const Utterance& utterance) const;

  // 1 x |V| log-probabilities at the mask of every utterance.
  std::vector<ag::Expr> log_probabilities(ag::Graph& g, const Conversation& conversation,
                                          const ConversationFeatures& features) const;
  // Sum over labeled utterances of -log P(gold label word); `count` receives
  // the number of terms.
  ag::Expr conversation_nll(ag::Graph& g, const Conversation& conversation,
                            const ConversationFeatures& features, int* count = nullptr) const;

  std::vector<MaskDistribution> predict(const Conversation& conversation,
                                        const ConversationFeatures& features) const;
  std::vector<std::string> classify(const Conversation& conversation,
                                    const ConversationFeatures& features,
                                    ClassifyMode mode = ClassifyMode::restricted) const;

  // Parameters updated by training in the configured mode.
  std::vector<Parameter*> trainable_parameters();
  // Every tensor of the model, prompt generator first.
  std::vector<Parameter*> all_parameters();
  std::map<std::string, Matrix> snapshot() const;
  void restore(const std::map<std::string, Matrix>& values);

 private:
  ConversationFeatures effective_features(const Conversation& conversation,
                                          const ConversationFeatures& features) const;

  RunConfig config_;
  PlanConfig plan_;
  std::unique_ptr<PromptGenerator> prompts_;
  std::unique_ptr<TransformerMaskedLm> plm_;
  Verbalizer verbalizer_;
};

}  // namespace cisper
