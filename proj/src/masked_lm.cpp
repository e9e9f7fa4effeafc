#include "cisper/masked_lm.hpp"

#include <fmt/format.h>

#include "cisper/error.hpp"

namespace cisper {

TransformerMaskedLm::TransformerMaskedLm(Vocabulary vocab, TransformerMlmConfig config,
                                         std::uint64_t seed)
    : MaskedLanguageModel(vocab), vocab_(std::move(vocab)), config_(config) {
  rebind_tokenizer(vocab_);
  if (config_.hidden < 1 || config_.layers < 1 || config_.max_length < 3) {
    throw ConfigError("masked LM needs hidden >= 1, layers >= 1, max_length >= 3");
  }
  config_.heads = nn::compatible_heads(config_.hidden, config_.heads);
  nn::Initializer init(seed);
  word_embeddings_ = &store_.add("word_embeddings", init.normal(vocab_.size(), config_.hidden, 0.5));
  position_embeddings_ =
      &store_.add("position_embeddings", init.normal(config_.max_length, config_.hidden, 0.1));
  embedding_norm_ = nn::LayerNorm(store_, "embedding_norm", config_.hidden);
  for (int l = 0; l < config_.layers; ++l) {
    layers_.emplace_back(store_, fmt::format("layer{}", l), config_.hidden, config_.heads,
                         config_.ff, init);
  }
  head_ = nn::Linear(store_, "lm_head", config_.hidden, vocab_.size(), init);
}

ag::Expr TransformerMaskedLm::embed_tokens(ag::Graph& g, std::span<const int> ids) const {
  return ag::lookup_rows(g.parameter(*word_embeddings_), ids);
}

std::vector<ag::Expr> TransformerMaskedLm::encode(ag::Graph& g, ag::Expr word_embeddings) const {
  const auto n = static_cast<int>(word_embeddings.rows());
  if (n > config_.max_length) {
    throw InputTooLongError(
        fmt::format("sequence of {} tokens exceeds model maximum {}", n, config_.max_length));
  }
  const ag::Expr positions = ag::slice_rows(g.parameter(*position_embeddings_), 0, n);
  std::vector<ag::Expr> states;
  states.push_back(embedding_norm_(g, ag::add(word_embeddings, positions)));
  for (const auto& layer : layers_) states.push_back(layer(g, states.back()));
  return states;
}

ag::Expr TransformerMaskedLm::lm_head(ag::Graph& g, ag::Expr final_hidden, int position) const {
  return head_(g, ag::slice_rows(final_hidden, position, 1));
}

Vector mask_distribution_for_ids(const MaskedLanguageModel& lm, std::span<const int> ids,
                                 int mask_position) {
  ag::Graph g;
  const auto states = lm.encode(g, lm.embed_tokens(g, ids));
  const ag::Expr probs = ag::softmax_rows(lm.lm_head(g, states.back(), mask_position));
  return probs.value().row(0).transpose();
}

}  // namespace cisper
