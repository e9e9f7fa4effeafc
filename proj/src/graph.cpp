#include "cisper/graph.hpp"

#include <cmath>
#include <numbers>

#include "cisper/error.hpp"

namespace cisper::ag {

Expr Graph::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Expr{this, nodes_.size() - 1};
}

Expr Graph::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, &p, true});
  return Expr{this, nodes_.size() - 1};
}

Expr Graph::record(Matrix value, std::span<const Expr> inputs, Backward backward) {
  bool needs = false;
  for (const Expr& in : inputs) needs = needs || nodes_[in.id].needs_grad;
  Node n{std::move(value), {}, {}, nullptr, needs};
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Expr{this, nodes_.size() - 1};
}

void Graph::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Graph::backward(Expr root) {
  if (root.rows() != 1 || root.cols() != 1) throw ShapeError("backward() needs a 1x1 root");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  accumulate(root.id, Matrix::Ones(1, 1));
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) {
      // Copy: the callback may accumulate into nodes that share storage.
      const Matrix g = n.grad;
      n.backward(*this, g);
    }
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

namespace {

void require_same_shape(Expr a, Expr b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

Graph& graph_of(Expr a) { return *a.graph; }

}  // namespace

Expr add(Expr a, Expr b) {
  Graph& g = graph_of(a);
  const Expr in[] = {a, b};
  if (b.rows() == 1 && a.rows() != 1 && a.cols() == b.cols()) {
    Matrix out = a.value().rowwise() + b.value().row(0);
    return g.record(std::move(out), in, [a, b](Graph& gr, const Matrix& og) {
      gr.accumulate(a.id, og);
      gr.accumulate(b.id, og.colwise().sum());
    });
  }
  require_same_shape(a, b, "add");
  return g.record(a.value() + b.value(), in, [a, b](Graph& gr, const Matrix& og) {
    gr.accumulate(a.id, og);
    gr.accumulate(b.id, og);
  });
}

Expr sub(Expr a, Expr b) {
  require_same_shape(a, b, "sub");
  const Expr in[] = {a, b};
  return graph_of(a).record(a.value() - b.value(), in, [a, b](Graph& gr, const Matrix& og) {
    gr.accumulate(a.id, og);
    gr.accumulate(b.id, -og);
  });
}

Expr cmul(Expr a, Expr b) {
  require_same_shape(a, b, "cmul");
  const Expr in[] = {a, b};
  Matrix out = a.value().cwiseProduct(b.value());
  return graph_of(a).record(std::move(out), in, [a, b](Graph& gr, const Matrix& og) {
    gr.accumulate(a.id, og.cwiseProduct(b.value()));
    gr.accumulate(b.id, og.cwiseProduct(a.value()));
  });
}

Expr scale(Expr a, double s) {
  const Expr in[] = {a};
  return graph_of(a).record(a.value() * s, in, [a, s](Graph& gr, const Matrix& og) {
    gr.accumulate(a.id, og * s);
  });
}

Expr matmul(Expr a, Expr b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + " differ");
  }
  const Expr in[] = {a, b};
  Matrix out = a.value() * b.value();
  return graph_of(a).record(std::move(out), in, [a, b](Graph& gr, const Matrix& og) {
    if (gr.needs_grad(a.id)) gr.accumulate(a.id, og * b.value().transpose());
    if (gr.needs_grad(b.id)) gr.accumulate(b.id, a.value().transpose() * og);
  });
}

Expr transpose(Expr a) {
  const Expr in[] = {a};
  return graph_of(a).record(a.value().transpose(), in, [a](Graph& gr, const Matrix& og) {
    gr.accumulate(a.id, og.transpose());
  });
}

Expr tanh(Expr a) {
  const Expr in[] = {a};
  Matrix out = a.value().array().tanh().matrix();
  Matrix deriv = (1.0 - out.array().square()).matrix();
  return graph_of(a).record(std::move(out), in,
                            [a, deriv = std::move(deriv)](Graph& gr, const Matrix& og) {
                              gr.accumulate(a.id, og.cwiseProduct(deriv));
                            });
}

Expr sigmoid(Expr a) {
  const Expr in[] = {a};
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  Matrix deriv = (out.array() * (1.0 - out.array())).matrix();
  return graph_of(a).record(std::move(out), in,
                            [a, deriv = std::move(deriv)](Graph& gr, const Matrix& og) {
                              gr.accumulate(a.id, og.cwiseProduct(deriv));
                            });
}

Expr gelu(Expr a) {
  const Expr in[] = {a};
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  Matrix deriv(x.rows(), x.cols());
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
    const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
    out.data()[i] = v * cdf;
    deriv.data()[i] = cdf + v * pdf;
  }
  return graph_of(a).record(std::move(out), in,
                            [a, deriv = std::move(deriv)](Graph& gr, const Matrix& og) {
                              gr.accumulate(a.id, og.cwiseProduct(deriv));
                            });
}

Expr softmax_rows(Expr a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  const Expr in[] = {a};
  Matrix y = out;
  return graph_of(a).record(std::move(out), in, [a, y = std::move(y)](Graph& gr, const Matrix& og) {
    Matrix ga(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = og.row(r).dot(y.row(r));
      ga.row(r) = (y.row(r).array() * (og.row(r).array() - dot)).matrix();
    }
    gr.accumulate(a.id, ga);
  });
}

Expr log_softmax_rows(Expr a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = (x.row(r).array() - lse).matrix();
  }
  const Expr in[] = {a};
  Matrix p = out.array().exp().matrix();
  return graph_of(a).record(std::move(out), in, [a, p = std::move(p)](Graph& gr, const Matrix& og) {
    Matrix ga(p.rows(), p.cols());
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      ga.row(r) = og.row(r) - p.row(r) * og.row(r).sum();
    }
    gr.accumulate(a.id, ga);
  });
}

Expr layer_norm_rows(Expr x, Expr gamma, Expr beta, double eps) {
  const Matrix& v = x.value();
  const Eigen::Index n = v.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
    throw ShapeError("layer_norm_rows: gamma/beta must be 1x" + std::to_string(n));
  }
  Matrix xhat(v.rows(), n);
  Vector inv_std(v.rows());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double mean = v.row(r).mean();
    const double var = (v.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = ((v.row(r).array() - mean) * inv_std(r)).matrix();
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  const Expr in[] = {x, gamma, beta};
  return graph_of(x).record(
      std::move(out), in,
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr,
                                                                              const Matrix& og) {
        gr.accumulate(gamma.id, og.cwiseProduct(xhat).colwise().sum());
        gr.accumulate(beta.id, og.colwise().sum());
        if (!gr.needs_grad(x.id)) return;
        const auto n = static_cast<double>(xhat.cols());
        Matrix dxhat = (og.array().rowwise() * gamma.value().row(0).array()).matrix();
        Matrix gx(xhat.rows(), xhat.cols());
        for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
          const double sum_d = dxhat.row(r).sum();
          const double sum_dx = dxhat.row(r).dot(xhat.row(r));
          gx.row(r) = (inv_std(r) / n) *
                      (n * dxhat.row(r).array() - sum_d - xhat.row(r).array() * sum_dx).matrix();
        }
        gr.accumulate(x.id, gx);
      });
}

Expr concat_cols(std::span<const Expr> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Expr& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const Expr& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    offsets.push_back(off);
    off += p.cols();
  }
  std::vector<Expr> ins(parts.begin(), parts.end());
  return parts.front().graph->record(
      std::move(out), parts, [ins, offsets](Graph& gr, const Matrix& og) {
        for (std::size_t i = 0; i < ins.size(); ++i) {
          if (gr.needs_grad(ins[i].id)) {
            gr.accumulate(ins[i].id, og.middleCols(offsets[i], ins[i].cols()));
          }
        }
      });
}

Expr concat_rows(std::span<const Expr> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Expr& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const Expr& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    offsets.push_back(off);
    off += p.rows();
  }
  std::vector<Expr> ins(parts.begin(), parts.end());
  return parts.front().graph->record(
      std::move(out), parts, [ins, offsets](Graph& gr, const Matrix& og) {
        for (std::size_t i = 0; i < ins.size(); ++i) {
          if (gr.needs_grad(ins[i].id)) {
            gr.accumulate(ins[i].id, og.middleRows(offsets[i], ins[i].rows()));
          }
        }
      });
}

Expr slice_rows(Expr a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows out of range");
  const Expr in[] = {a};
  return graph_of(a).record(a.value().middleRows(start, count), in,
                            [a, start, count](Graph& gr, const Matrix& og) {
                              Matrix ga = Matrix::Zero(a.rows(), a.cols());
                              ga.middleRows(start, count) = og;
                              gr.accumulate(a.id, ga);
                            });
}

Expr slice_cols(Expr a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols out of range");
  const Expr in[] = {a};
  return graph_of(a).record(a.value().middleCols(start, count), in,
                            [a, start, count](Graph& gr, const Matrix& og) {
                              Matrix ga = Matrix::Zero(a.rows(), a.cols());
                              ga.middleCols(start, count) = og;
                              gr.accumulate(a.id, ga);
                            });
}

Expr reshape(Expr a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) {
    throw ShapeError("reshape: " + std::to_string(a.value().size()) + " elements into " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  const Expr in[] = {a};
  return graph_of(a).record(std::move(out), in, [a](Graph& gr, const Matrix& og) {
    gr.accumulate(a.id, Matrix(Eigen::Map<const Matrix>(og.data(), a.rows(), a.cols())));
  });
}

Expr lookup_rows(Expr table, std::span<const int> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw ShapeError("lookup_rows: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(table.rows()) + " rows");
    }
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  const Expr in[] = {table};
  return graph_of(table).record(std::move(out), in,
                                [table, idv = std::move(idv)](Graph& gr, const Matrix& og) {
                                  Matrix gt = Matrix::Zero(table.rows(), table.cols());
                                  for (std::size_t i = 0; i < idv.size(); ++i) {
                                    gt.row(idv[i]) += og.row(static_cast<Eigen::Index>(i));
                                  }
                                  gr.accumulate(table.id, gt);
                                });
}

Expr pick(Expr a, Eigen::Index row, Eigen::Index col) {
  if (row < 0 || row >= a.rows() || col < 0 || col >= a.cols()) throw ShapeError("pick out of range");
  Matrix out(1, 1);
  out(0, 0) = a.value()(row, col);
  const Expr in[] = {a};
  return graph_of(a).record(std::move(out), in, [a, row, col](Graph& gr, const Matrix& og) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    ga(row, col) = og(0, 0);
    gr.accumulate(a.id, ga);
  });
}

Expr sum(Expr a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Expr in[] = {a};
  return graph_of(a).record(std::move(out), in, [a](Graph& gr, const Matrix& og) {
    gr.accumulate(a.id, Matrix::Constant(a.rows(), a.cols(), og(0, 0)));
  });
}

}  // namespace cisper::ag
