#pragma once

// Parameter storage and the small set of layers the pipeline is built from.

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cisper/graph.hpp"

namespace cisper::nn {

using ag::Expr;
using ag::Graph;

// Owns named parameters. Addresses stay stable for the lifetime of the store.
class ParameterStore {
 public:
  explicit ParameterStore(std::string prefix = {}) : prefix_(std::move(prefix)) {}
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(const std::string& name, Matrix init);
  Parameter& get(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }
  const std::string& prefix() const { return prefix_; }

  std::map<std::string, Matrix> snapshot() const;
  void restore(const std::map<std::string, Matrix>& values);
  void zero_grad();

 private:
  std::string prefix_;
  std::vector<std::unique_ptr<Parameter>> params_;
};

// Seeded scaled-normal initializer: N(0, 1/fan_in).
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Matrix scaled_normal(Eigen::Index rows, Eigen::Index cols);
  Matrix normal(Eigen::Index rows, Eigen::Index cols, double stddev);
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

struct Linear {
  Parameter* weight = nullptr;  // in x out
  Parameter* bias = nullptr;    // 1 x out, may be null

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, int in, int out, Initializer& init,
         bool with_bias = true);
  Expr operator()(Graph& g, Expr x) const;
  int in_dim() const { return static_cast<int>(weight->value.rows()); }
  int out_dim() const { return static_cast<int>(weight->value.cols()); }
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, int dim);
  Expr operator()(Graph& g, Expr x) const;
};

struct MultiHeadSelfAttention {
  Linear query, key, value, output;
  int heads = 1;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParameterStore& store, const std::string& name, int dim, int heads,
                         Initializer& init);
  Expr operator()(Graph& g, Expr x) const;
};

// Post-norm encoder layer (self-attention and feed-forward sublayers, each
// followed by residual add and layer normalization).
struct TransformerEncoderLayer {
  MultiHeadSelfAttention attention;
  LayerNorm norm1, norm2;
  Linear ff_in, ff_out;

  TransformerEncoderLayer() = default;
  TransformerEncoderLayer(ParameterStore& store, const std::string& name, int dim, int heads,
                          int ff_dim, Initializer& init);
  Expr operator()(Graph& g, Expr x) const;
};

// Largest head count <= requested that divides dim.
int compatible_heads(int dim, int requested);

struct Mlp {
  Linear hidden, output;

  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, int in, int hidden_dim, int out,
      Initializer& init);
  Expr operator()(Graph& g, Expr x) const;
};

struct LstmDirection {
  Parameter* input_weight = nullptr;   // in x 4h, gate order i,f,g,o
  Parameter* hidden_weight = nullptr;  // h x 4h
  Parameter* bias = nullptr;           // 1 x 4h
};

// Single-layer bidirectional LSTM. Output row t is forward_t ⊕ backward_t.
struct BiLstm {
  LstmDirection forward, backward;
  int hidden = 0;

  BiLstm() = default;
  BiLstm(ParameterStore& store, const std::string& name, int in, int hidden, Initializer& init);
  Expr operator()(Graph& g, Expr sequence) const;

 private:
  std::vector<Expr> run(Graph& g, Expr sequence, const LstmDirection& dir, bool reverse) const;
};

}  // namespace cisper::nn
