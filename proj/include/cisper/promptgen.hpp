#pragma once

// Continuous prompt generation. Per conversation:
//   1. speaker rows  s_t = x_t ⊕ W_e(c^t_1 ⊕ ... ⊕ c^t_6)
//      listener rows s_t = x_t ⊕ W_p(c^t_7 ⊕ c^t_8 ⊕ c^t_9)
//   2. each role's row sequence is projected to d_T and run through that
//      role's Transformer encoder, giving H_e and H_p (L x d_T);
//   3. an MLP per role widens each row to 2·N·d_T, read as 2N prompt vectors
//      (first N left of the utterance, last N right);
//   4. for each utterance the 2(N_e+N_p) vectors, ordered e_l, p_l, p_r, e_r,
//      pass through a BiLSTM whose two d_T/2 halves form the final prompts.

#include <cstdint>
#include <string_view>
#include <vector>

#include "cisper/encoders.hpp"
#include "cisper/graph.hpp"
#include "cisper/nn.hpp"

namespace cisper {

enum class PromptMode { full, random, left, right, context_only, commonsense_only, fixed_template };

std::string_view to_string(PromptMode mode);
PromptMode parse_prompt_mode(std::string_view name);

enum class Role { speaker, listener };

struct PromptGenConfig {
  int semantic_dim = 1024;     // d_u
  int commonsense_dim = 768;   // d_c
  int prompt_dim = 1024;       // d_T, even
  int speaker_tokens = 3;      // N_e
  int listener_tokens = 3;     // N_p
  int encoder_layers = 1;
  int encoder_heads = 8;
  int ff_multiplier = 4;
  bool positional = true;
  int max_conversation_length = 128;

  int tokens_per_utterance() const { return 2 * (speaker_tokens + listener_tokens); }
  void validate() const;
};

// Final pseudo-token embeddings for one utterance.
struct PromptBundle {
  Matrix e_left;   // N_e x d_T
  Matrix p_left;   // N_p x d_T
  Matrix p_right;  // N_p x d_T
  Matrix e_right;  // N_e x d_T
  PromptMode mode = PromptMode::full;

  // Rows in order e_left, p_left, p_right, e_right.
  Matrix stacked() const;
  int token_count() const;
  bool operator==(const PromptBundle& o) const;
};

struct BlendMatrices {
  Matrix speaker;   // H_e, L x d_T
  Matrix listener;  // H_p, L x d_T
};

// c^1_j ⊕ ... ⊕ c^L_j for a 1-based relation index j.
Vector concat_relation_across_utterances(const ConversationFeatures& features, int j);

class PromptGenerator {
 public:
  PromptGenerator(PromptGenConfig config, std::uint64_t seed);
  PromptGenerator(const PromptGenerator&) = delete;
  PromptGenerator& operator=(const PromptGenerator&) = delete;

  const PromptGenConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  // Rows fed to a role's encoder (L x 2·d_u); `mode` selects which slots are
  // replaced by fixed random vectors.
  ag::Expr blend_input(ag::Graph& g, const ConversationFeatures& features, Role role,
                       PromptMode mode = PromptMode::full) const;
  ag::Expr blend_context(ag::Graph& g, const ConversationFeatures& features, Role role,
                         PromptMode mode = PromptMode::full) const;

  struct Halves {
    ag::Expr left;   // L x (N·d_T)
    ag::Expr right;  // L x (N·d_T)
  };
  ag::Expr expand(ag::Graph& g, ag::Expr hidden, Role role) const;  // L x (2N·d_T)
  Halves split_halves(ag::Graph& g, ag::Expr expanded, Role role) const;

  // Inputs are N x d_T blocks; output is the 2(N_e+N_p) x d_T BiLSTM result.
  ag::Expr sequentialize(ag::Graph& g, ag::Expr e_left, ag::Expr p_left, ag::Expr p_right,
                         ag::Expr e_right) const;

  // One 2(N_e+N_p) x d_T expression per utterance, rows ordered e_l, p_l, p_r, e_r.
  std::vector<ag::Expr> generate(ag::Graph& g, const ConversationFeatures& features,
                                 PromptMode mode) const;

  // Value-level forms of the above.
  Matrix blend_context(const ConversationFeatures& features, Role role) const;
  BlendMatrices blend(const ConversationFeatures& features) const;
  Matrix expand_to_prompts(const Matrix& hidden, Role role) const;
  PromptBundle sequentialize_prompts(const Matrix& e_left, const Matrix& p_left,
                                     const Matrix& p_right, const Matrix& e_right) const;
  std::vector<PromptBundle> generate_prompt_bundle(const ConversationFeatures& features,
                                                   PromptMode mode) const;

  // Parameters that take part in `mode`'s forward pass.
  std::vector<Parameter*> trainable_parameters(PromptMode mode);
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  const nn::BiLstm& bilstm() const { return bilstm_; }

 private:
  struct Branch {
    nn::Linear commonsense_projection;  // W_e or W_p, no bias
    nn::Linear input_projection;        // 2·d_u -> d_T
    Parameter* positions = nullptr;     // max_L x d_T
    std::vector<nn::TransformerEncoderLayer> encoder;
    nn::Mlp mlp;
  };

  const Branch& branch(Role role) const { return role == Role::speaker ? speaker_ : listener_; }
  int tokens(Role role) const {
    return role == Role::speaker ? config_.speaker_tokens : config_.listener_tokens;
  }
  Branch make_branch(const std::string& name, int relations, int tokens, nn::Initializer& init);
  PromptBundle unstack(const Matrix& stacked, PromptMode mode) const;

  PromptGenConfig config_;
  std::uint64_t seed_;
  nn::ParameterStore store_{"promptgen"};
  Branch speaker_;
  Branch listener_;
  nn::BiLstm bilstm_;
  Parameter* random_prompts_ = nullptr;  // 2(N_e+N_p) x d_T, used by PromptMode::random
};

}  // namespace cisper
