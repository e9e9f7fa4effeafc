#include "cisper/promptgen.hpp"

#include <fmt/format.h>

#include "cisper/error.hpp"

namespace cisper {

std::string_view to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::full: return "full";
    case PromptMode::random: return "random";
    case PromptMode::left: return "left";
    case PromptMode::right: return "right";
    case PromptMode::context_only: return "context-only";
    case PromptMode::commonsense_only: return "commonsense-only";
    case PromptMode::fixed_template: return "fixed-template";
  }
  return "full";
}

PromptMode parse_prompt_mode(std::string_view name) {
  for (PromptMode m : {PromptMode::full, PromptMode::random, PromptMode::left, PromptMode::right,
                       PromptMode::context_only, PromptMode::commonsense_only,
                       PromptMode::fixed_template}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError(fmt::format(
      "unknown prompt mode '{}' (expected full, random, left, right, context-only, "
      "commonsense-only or fixed-template)",
      name));
}

void PromptGenConfig::validate() const {
  if (semantic_dim < 1 || commonsense_dim < 1) throw ConfigError("d_u and d_c must be >= 1");
  if (prompt_dim < 2 || prompt_dim % 2 != 0) {
    throw ConfigError(fmt::format("d_T must be a positive even number (got {})", prompt_dim));
  }
  if (speaker_tokens < 1 || listener_tokens < 1) throw ConfigError("N_e and N_p must be >= 1");
  if (encoder_layers < 1 || encoder_heads < 1 || ff_multiplier < 1) {
    throw ConfigError("encoder layers, heads and feed-forward multiplier must be >= 1");
  }
  if (max_conversation_length < 1) throw ConfigError("max_conversation_length must be >= 1");
}

Matrix PromptBundle::stacked() const {
  Matrix out(e_left.rows() + p_left.rows() + p_right.rows() + e_right.rows(), e_left.cols());
  out << e_left, p_left, p_right, e_right;
  return out;
}

int PromptBundle::token_count() const {
  return static_cast<int>(e_left.rows() + p_left.rows() + p_right.rows() + e_right.rows());
}

bool PromptBundle::operator==(const PromptBundle& o) const {
  auto same = [](const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
  };
  return mode == o.mode && same(e_left, o.e_left) && same(p_left, o.p_left) &&
         same(p_right, o.p_right) && same(e_right, o.e_right);
}

Vector concat_relation_across_utterances(const ConversationFeatures& features, int j) {
  if (j < 1 || j > kNumRelations) {
    throw ShapeError(fmt::format("relation index {} outside 1..{}", j, kNumRelations));
  }
  const int L = features.length();
  const int dc = features.commonsense_dim();
  Vector out(static_cast<Eigen::Index>(L) * dc);
  for (int t = 0; t < L; ++t) {
    out.segment(static_cast<Eigen::Index>(t) * dc, dc) = features.relation(t, j - 1).cast<double>();
  }
  return out;
}

PromptGenerator::Branch PromptGenerator::make_branch(const std::string& name, int relations,
                                                     int n_tokens, nn::Initializer& init) {
  const int dT = config_.prompt_dim;
  Branch b;
  b.commonsense_projection = nn::Linear(store_, name + ".commonsense_projection",
                                        relations * config_.commonsense_dim, config_.semantic_dim,
                                        init, /*with_bias=*/false);
  b.input_projection =
      nn::Linear(store_, name + ".input_projection", 2 * config_.semantic_dim, dT, init);
  b.positions = &store_.add(name + ".positions", init.normal(config_.max_conversation_length, dT, 0.1));
  const int heads = nn::compatible_heads(dT, config_.encoder_heads);
  for (int l = 0; l < config_.encoder_layers; ++l) {
    b.encoder.emplace_back(store_, fmt::format("{}.encoder{}", name, l), dT, heads,
                           config_.ff_multiplier * dT, init);
  }
  b.mlp = nn::Mlp(store_, name + ".mlp", dT, dT, 2 * n_tokens * dT, init);
  return b;
}

PromptGenerator::PromptGenerator(PromptGenConfig config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  config_.validate();
  nn::Initializer init(seed);
  speaker_ = make_branch("speaker", kNumSpeakerRelations, config_.speaker_tokens, init);
  listener_ = make_branch("listener", kNumRelations - kNumSpeakerRelations,
                          config_.listener_tokens, init);
  bilstm_ = nn::BiLstm(store_, "bilstm", config_.prompt_dim, config_.prompt_dim / 2, init);
  random_prompts_ = &store_.add(
      "random_prompts", init.normal(config_.tokens_per_utterance(), config_.prompt_dim, 1.0));
}

ag::Expr PromptGenerator::blend_input(ag::Graph& g, const ConversationFeatures& features,
                                      Role role, PromptMode mode) const {
  const int L = features.length();
  const int du = config_.semantic_dim;
  const int dc = config_.commonsense_dim;
  if (features.semantic_dim() != du || features.commonsense_dim() != dc ||
      features.commonsense.rows() != L) {
    throw ShapeError(fmt::format(
        "conversation {}: features are (d_u={}, d_c={}) but the prompt generator expects ({}, {})",
        features.conversation_id, features.semantic_dim(), features.commonsense_dim(), du, dc));
  }
  const int first = role == Role::speaker ? 0 : kNumSpeakerRelations;
  const int count = role == Role::speaker ? kNumSpeakerRelations
                                          : kNumRelations - kNumSpeakerRelations;

  Matrix semantic;
  if (mode == PromptMode::commonsense_only) {
    const RowVector noise = hashed_unit_vector(seed_, "ablation.semantic", du).transpose();
    semantic = noise.replicate(L, 1);
  } else {
    semantic = features.semantic.cast<double>();
  }
  Matrix commonsense(L, static_cast<Eigen::Index>(count) * dc);
  if (mode == PromptMode::context_only) {
    for (int j = 0; j < count; ++j) {
      const RowVector noise = hashed_unit_vector(
          seed_, fmt::format("ablation.{}", kRelations[static_cast<std::size_t>(first + j)]), dc)
                                  .transpose();
      commonsense.middleCols(static_cast<Eigen::Index>(j) * dc, dc) = noise.replicate(L, 1);
    }
  } else {
    commonsense = features.commonsense.middleCols(static_cast<Eigen::Index>(first) * dc,
                                                  static_cast<Eigen::Index>(count) * dc)
                      .cast<double>();
  }
  const ag::Expr projected =
      branch(role).commonsense_projection(g, g.constant(std::move(commonsense)));
  const ag::Expr parts[] = {g.constant(std::move(semantic)), projected};
  return ag::concat_cols(parts);
}

ag::Expr PromptGenerator::blend_context(ag::Graph& g, const ConversationFeatures& features,
                                        Role role, PromptMode mode) const {
  const Branch& b = branch(role);
  const int L = features.length();
  ag::Expr h = b.input_projection(g, blend_input(g, features, role, mode));
  if (config_.positional) {
    if (L > config_.max_conversation_length) {
      throw ConfigError(fmt::format("conversation {} has {} utterances; max_conversation_length is {}",
                                    features.conversation_id, L, config_.max_conversation_length));
    }
    h = ag::add(h, ag::slice_rows(g.parameter(*b.positions), 0, L));
  }
  for (const auto& layer : b.encoder) h = layer(g, h);
  if (!h.value().allFinite()) {
    throw NumericalError(fmt::format("non-finite blend output for conversation {}",
                                     features.conversation_id));
  }
  return h;
}

ag::Expr PromptGenerator::expand(ag::Graph& g, ag::Expr hidden, Role role) const {
  if (hidden.cols() != config_.prompt_dim) {
    throw ShapeError(fmt::format("expand: hidden width {} != d_T {}", hidden.cols(),
                                 config_.prompt_dim));
  }
  return branch(role).mlp(g, hidden);
}

PromptGenerator::Halves PromptGenerator::split_halves(ag::Graph&, ag::Expr expanded,
                                                      Role role) const {
  const Eigen::Index width = static_cast<Eigen::Index>(tokens(role)) * config_.prompt_dim;
  if (expanded.cols() != 2 * width) {
    throw ShapeError(fmt::format("expanded prompts have width {}, expected {}", expanded.cols(),
                                 2 * width));
  }
  return {ag::slice_cols(expanded, 0, width), ag::slice_cols(expanded, width, width)};
}

ag::Expr PromptGenerator::sequentialize(ag::Graph& g, ag::Expr e_left, ag::Expr p_left,
                                        ag::Expr p_right, ag::Expr e_right) const {
  if (e_left.rows() != config_.speaker_tokens || e_right.rows() != config_.speaker_tokens ||
      p_left.rows() != config_.listener_tokens || p_right.rows() != config_.listener_tokens) {
    throw ShapeError(fmt::format("sequentialize expects ({0}, {1}, {1}, {0}) vectors", config_.speaker_tokens,
                                 config_.listener_tokens));
  }
  const ag::Expr parts[] = {e_left, p_left, p_right, e_right};
  return bilstm_(g, ag::concat_rows(parts));
}

std::vector<ag::Expr> PromptGenerator::generate(ag::Graph& g, const ConversationFeatures& features,
                                                PromptMode mode) const {
  const int L = features.length();
  std::vector<ag::Expr> out;
  out.reserve(static_cast<std::size_t>(L));
  if (mode == PromptMode::fixed_template) {
    throw ConfigError("fixed-template mode has no continuous prompts");
  }
  if (mode == PromptMode::random) {
    const ag::Expr shared = g.parameter(*random_prompts_);
    for (int t = 0; t < L; ++t) out.push_back(shared);
    return out;
  }
  const int dT = config_.prompt_dim;
  const int Ne = config_.speaker_tokens;
  const int Np = config_.listener_tokens;
  const auto e = split_halves(g, expand(g, blend_context(g, features, Role::speaker, mode), Role::speaker),
                              Role::speaker);
  const auto p = split_halves(
      g, expand(g, blend_context(g, features, Role::listener, mode), Role::listener), Role::listener);
  for (int t = 0; t < L; ++t) {
    auto row = [&](ag::Expr m, int n) { return ag::reshape(ag::slice_rows(m, t, 1), n, dT); };
    out.push_back(sequentialize(g, row(e.left, Ne), row(p.left, Np), row(p.right, Np),
                                row(e.right, Ne)));
  }
  return out;
}

Matrix PromptGenerator::blend_context(const ConversationFeatures& features, Role role) const {
  ag::Graph g;
  return blend_context(g, features, role, PromptMode::full).value();
}

BlendMatrices PromptGenerator::blend(const ConversationFeatures& features) const {
  return {blend_context(features, Role::speaker), blend_context(features, Role::listener)};
}

Matrix PromptGenerator::expand_to_prompts(const Matrix& hidden, Role role) const {
  ag::Graph g;
  return expand(g, g.constant(hidden), role).value();
}

PromptBundle PromptGenerator::unstack(const Matrix& stacked, PromptMode mode) const {
  const int Ne = config_.speaker_tokens;
  const int Np = config_.listener_tokens;
  PromptBundle b;
  b.e_left = stacked.middleRows(0, Ne);
  b.p_left = stacked.middleRows(Ne, Np);
  b.p_right = stacked.middleRows(Ne + Np, Np);
  b.e_right = stacked.middleRows(Ne + 2 * Np, Ne);
  b.mode = mode;
  return b;
}

PromptBundle PromptGenerator::sequentialize_prompts(const Matrix& e_left, const Matrix& p_left,
                                                    const Matrix& p_right,
                                                    const Matrix& e_right) const {
  ag::Graph g;
  const ag::Expr out = sequentialize(g, g.constant(e_left), g.constant(p_left),
                                     g.constant(p_right), g.constant(e_right));
  return unstack(out.value(), PromptMode::full);
}

std::vector<PromptBundle> PromptGenerator::generate_prompt_bundle(
    const ConversationFeatures& features, PromptMode mode) const {
  ag::Graph g;
  const auto exprs = generate(g, features, mode);
  std::vector<PromptBundle> out;
  out.reserve(exprs.size());
  for (const auto& e : exprs) out.push_back(unstack(e.value(), mode));
  return out;
}

std::vector<Parameter*> PromptGenerator::trainable_parameters(PromptMode mode) {
  std::vector<Parameter*> out;
  if (mode == PromptMode::fixed_template) return out;
  if (mode == PromptMode::random) return {random_prompts_};
  for (Parameter* p : store_.all()) {
    if (p != random_prompts_) out.push_back(p);
  }
  if (!config_.positional) {
    std::erase_if(out, [&](Parameter* p) { return p == speaker_.positions || p == listener_.positions; });
  }
  return out;
}

}  // namespace cisper
