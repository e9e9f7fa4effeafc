#include "cisper/nn.hpp"

#include <cmath>

#include "cisper/error.hpp"

namespace cisper::nn {

Parameter& ParameterStore::add(const std::string& name, Matrix init) {
  const std::string full = prefix_.empty() ? name : prefix_ + "." + name;
  if (find(full) != nullptr) throw ShapeError("duplicate parameter " + full);
  params_.push_back(std::make_unique<Parameter>(full, std::move(init)));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw NotFoundError("no parameter named " + name);
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::map<std::string, Matrix> ParameterStore::snapshot() const {
  std::map<std::string, Matrix> out;
  for (const auto& p : params_) out.emplace(p->name, p->value);
  return out;
}

void ParameterStore::restore(const std::map<std::string, Matrix>& values) {
  for (auto& p : params_) {
    auto it = values.find(p->name);
    if (it == values.end()) throw NotFoundError("snapshot lacks parameter " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw SchemaError("shape mismatch restoring " + p->name);
    }
    p->value = it->second;
  }
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

Matrix Initializer::normal(Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng_);
  return m;
}

Matrix Initializer::scaled_normal(Eigen::Index rows, Eigen::Index cols) {
  return normal(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)));
}

Linear::Linear(ParameterStore& store, const std::string& name, int in, int out, Initializer& init,
               bool with_bias) {
  weight = &store.add(name + ".weight", init.scaled_normal(in, out));
  if (with_bias) bias = &store.add(name + ".bias", Matrix::Zero(1, out));
}

Expr Linear::operator()(Graph& g, Expr x) const {
  Expr y = ag::matmul(x, g.parameter(*weight));
  if (bias != nullptr) y = ag::add(y, g.parameter(*bias));
  return y;
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, int dim) {
  gamma = &store.add(name + ".gamma", Matrix::Ones(1, dim));
  beta = &store.add(name + ".beta", Matrix::Zero(1, dim));
}

Expr LayerNorm::operator()(Graph& g, Expr x) const {
  return ag::layer_norm_rows(x, g.parameter(*gamma), g.parameter(*beta));
}

int compatible_heads(int dim, int requested) {
  for (int h = std::min(dim, std::max(requested, 1)); h > 1; --h) {
    if (dim % h == 0) return h;
  }
  return 1;
}

MultiHeadSelfAttention::MultiHeadSelfAttention(ParameterStore& store, const std::string& name,
                                               int dim, int h, Initializer& init)
    : query(store, name + ".query", dim, dim, init),
      key(store, name + ".key", dim, dim, init),
      value(store, name + ".value", dim, dim, init),
      output(store, name + ".output", dim, dim, init),
      heads(h) {
  if (dim % h != 0) throw ShapeError(name + ": dim " + std::to_string(dim) + " not divisible by heads");
}

Expr MultiHeadSelfAttention::operator()(Graph& g, Expr x) const {
  const Expr q = query(g, x);
  const Expr k = key(g, x);
  const Expr v = value(g, x);
  const Eigen::Index head_dim = q.cols() / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Expr> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const Expr qh = ag::slice_cols(q, h * head_dim, head_dim);
    const Expr kh = ag::slice_cols(k, h * head_dim, head_dim);
    const Expr vh = ag::slice_cols(v, h * head_dim, head_dim);
    const Expr scores = ag::scale(ag::matmul(qh, ag::transpose(kh)), inv_scale);
    outs.push_back(ag::matmul(ag::softmax_rows(scores), vh));
  }
  return output(g, heads == 1 ? outs.front() : ag::concat_cols(outs));
}

TransformerEncoderLayer::TransformerEncoderLayer(ParameterStore& store, const std::string& name,
                                                 int dim, int heads, int ff_dim, Initializer& init)
    : attention(store, name + ".attention", dim, heads, init),
      norm1(store, name + ".norm1", dim),
      norm2(store, name + ".norm2", dim),
      ff_in(store, name + ".ff_in", dim, ff_dim, init),
      ff_out(store, name + ".ff_out", ff_dim, dim, init) {}

Expr TransformerEncoderLayer::operator()(Graph& g, Expr x) const {
  const Expr h = norm1(g, ag::add(x, attention(g, x)));
  return norm2(g, ag::add(h, ff_out(g, ag::gelu(ff_in(g, h)))));
}

Mlp::Mlp(ParameterStore& store, const std::string& name, int in, int hidden_dim, int out,
         Initializer& init)
    : hidden(store, name + ".hidden", in, hidden_dim, init),
      output(store, name + ".output", hidden_dim, out, init) {}

Expr Mlp::operator()(Graph& g, Expr x) const { return output(g, ag::gelu(hidden(g, x))); }

namespace {

LstmDirection make_direction(ParameterStore& store, const std::string& name, int in, int hidden,
                             Initializer& init) {
  LstmDirection d;
  d.input_weight = &store.add(name + ".input_weight", init.scaled_normal(in, 4 * hidden));
  d.hidden_weight = &store.add(name + ".hidden_weight", init.scaled_normal(hidden, 4 * hidden));
  d.bias = &store.add(name + ".bias", Matrix::Zero(1, 4 * hidden));
  return d;
}

}  // namespace

BiLstm::BiLstm(ParameterStore& store, const std::string& name, int in, int h, Initializer& init)
    : forward(make_direction(store, name + ".forward", in, h, init)),
      backward(make_direction(store, name + ".backward", in, h, init)),
      hidden(h) {}

std::vector<Expr> BiLstm::run(Graph& g, Expr sequence, const LstmDirection& dir,
                              bool reverse) const {
  const Eigen::Index steps = sequence.rows();
  const Expr wx = g.parameter(*dir.input_weight);
  const Expr wh = g.parameter(*dir.hidden_weight);
  const Expr b = g.parameter(*dir.bias);
  // Input contributions for all steps at once.
  const Expr projected = ag::add(ag::matmul(sequence, wx), b);
  Expr h = g.constant(Matrix::Zero(1, hidden));
  Expr c = g.constant(Matrix::Zero(1, hidden));
  std::vector<Expr> outputs(static_cast<std::size_t>(steps));
  for (Eigen::Index s = 0; s < steps; ++s) {
    const Eigen::Index t = reverse ? steps - 1 - s : s;
    const Expr gates = ag::add(ag::slice_rows(projected, t, 1), ag::matmul(h, wh));
    const Expr i = ag::sigmoid(ag::slice_cols(gates, 0, hidden));
    const Expr f = ag::sigmoid(ag::slice_cols(gates, hidden, hidden));
    const Expr cand = ag::tanh(ag::slice_cols(gates, 2 * hidden, hidden));
    const Expr o = ag::sigmoid(ag::slice_cols(gates, 3 * hidden, hidden));
    c = ag::add(ag::cmul(f, c), ag::cmul(i, cand));
    h = ag::cmul(o, ag::tanh(c));
    outputs[static_cast<std::size_t>(t)] = h;
  }
  return outputs;
}

Expr BiLstm::operator()(Graph& g, Expr sequence) const {
  const auto fw = run(g, sequence, forward, false);
  const auto bw = run(g, sequence, backward, true);
  std::vector<Expr> rows;
  rows.reserve(fw.size());
  for (std::size_t t = 0; t < fw.size(); ++t) {
    const Expr pair[] = {fw[t], bw[t]};
    rows.push_back(ag::concat_cols(pair));
  }
  return ag::concat_rows(rows);
}

}  // namespace cisper::nn
