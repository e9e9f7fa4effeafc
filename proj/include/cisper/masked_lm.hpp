#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cisper/graph.hpp"
#include "cisper/nn.hpp"
#include "cisper/tokenizer.hpp"

namespace cisper {

// The prediction backend: a masked language model whose word-embedding
// stage can be bypassed so that externally supplied vectors occupy some
// input positions.
class MaskedLanguageModel {
 public:
  virtual ~MaskedLanguageModel() = default;

  virtual const Vocabulary& vocabulary() const = 0;
  const WordPieceTokenizer& tokenizer() const { return tokenizer_; }
  virtual int hidden_dim() const = 0;
  virtual int max_length() const = 0;
  virtual int num_layers() const = 0;

  // Word-embedding lookup only (no positions): n x hidden.
  virtual ag::Expr embed_tokens(ag::Graph& g, std::span<const int> ids) const = 0;

  // Positional machinery plus encoder stack. Returns the hidden states after
  // the embedding stage followed by one entry per layer (num_layers()+1).
  virtual std::vector<ag::Expr> encode(ag::Graph& g, ag::Expr word_embeddings) const = 0;

  // Vocabulary logits for one position of the final hidden states: 1 x |V|.
  virtual ag::Expr lm_head(ag::Graph& g, ag::Expr final_hidden, int position) const = 0;

  virtual nn::ParameterStore& parameters() = 0;
  virtual const nn::ParameterStore& parameters() const = 0;

 protected:
  explicit MaskedLanguageModel(const Vocabulary& vocab) : tokenizer_(vocab) {}
  // Re-points the tokenizer after the owning object has moved its vocabulary.
  void rebind_tokenizer(const Vocabulary& vocab) { tokenizer_ = WordPieceTokenizer(vocab); }

 private:
  WordPieceTokenizer tokenizer_;
};

struct TransformerMlmConfig {
  int hidden = 16;
  int layers = 2;
  int heads = 2;
  int ff = 64;
  int max_length = 64;
};

// A compact BERT-style masked LM: word + learned position embeddings,
// embedding layer norm, post-norm encoder layers, linear vocabulary head.
class TransformerMaskedLm final : public MaskedLanguageModel {
 public:
  TransformerMaskedLm(Vocabulary vocab, TransformerMlmConfig config, std::uint64_t seed);
  TransformerMaskedLm(const TransformerMaskedLm&) = delete;
  TransformerMaskedLm& operator=(const TransformerMaskedLm&) = delete;

  const Vocabulary& vocabulary() const override { return vocab_; }
  int hidden_dim() const override { return config_.hidden; }
  int max_length() const override { return config_.max_length; }
  int num_layers() const override { return config_.layers; }
  const TransformerMlmConfig& config() const { return config_; }

  ag::Expr embed_tokens(ag::Graph& g, std::span<const int> ids) const override;
  std::vector<ag::Expr> encode(ag::Graph& g, ag::Expr word_embeddings) const override;
  ag::Expr lm_head(ag::Graph& g, ag::Expr final_hidden, int position) const override;

  nn::ParameterStore& parameters() override { return store_; }
  const nn::ParameterStore& parameters() const override { return store_; }

 private:
  Vocabulary vocab_;
  TransformerMlmConfig config_;
  nn::ParameterStore store_{"plm"};
  Parameter* word_embeddings_ = nullptr;
  Parameter* position_embeddings_ = nullptr;
  nn::LayerNorm embedding_norm_;
  std::vector<nn::TransformerEncoderLayer> layers_;
  nn::Linear head_;
};

// Softmax over the vocabulary at `mask_position` for a plain token sequence.
Vector mask_distribution_for_ids(const MaskedLanguageModel& lm, std::span<const int> ids,
                                 int mask_position);

}  // namespace cisper
