#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Graph records every operation applied to its expressions. Calling
// backward() on a 1x1 expression walks the tape in reverse and accumulates
// gradients; gradients reaching a Parameter leaf are added to that
// parameter's persistent `grad` buffer, so several graphs can contribute to
// one optimizer step.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cisper {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace ag {

class Graph;

struct Expr {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, const Matrix& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Expr constant(Matrix value);
  Expr parameter(Parameter& p);

  // Records a derived node. `backward` receives the gradient of the output
  // and must push contributions into the inputs via accumulate().
  Expr record(Matrix value, std::span<const Expr> inputs, Backward backward);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  // Gradient of the last backward() call; empty when no gradient reached it.
  const Matrix& grad(Expr e) const { return nodes_[e.id].grad; }

  void accumulate(std::size_t id, const Matrix& g);
  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    accumulate(id, Matrix(g));
  }

  // Backpropagates from a 1x1 root. Parameter leaves receive += gradients.
  void backward(Expr root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Expr::value() const { return graph->value(id); }

// Arithmetic. add() broadcasts a 1xN right operand across the rows of an MxN left operand.
Expr add(Expr a, Expr b);
Expr sub(Expr a, Expr b);
Expr cmul(Expr a, Expr b);
Expr scale(Expr a, double s);
Expr matmul(Expr a, Expr b);
Expr transpose(Expr a);

// Elementwise nonlinearities.
Expr tanh(Expr a);
Expr sigmoid(Expr a);
Expr gelu(Expr a);  // exact (erf) form

// Row-wise normalizations.
Expr softmax_rows(Expr a);
Expr log_softmax_rows(Expr a);
Expr layer_norm_rows(Expr x, Expr gamma, Expr beta, double eps = 1e-5);

// Structural.
Expr concat_cols(std::span<const Expr> parts);
Expr concat_rows(std::span<const Expr> parts);
Expr slice_rows(Expr a, Eigen::Index start, Eigen::Index count);
Expr slice_cols(Expr a, Eigen::Index start, Eigen::Index count);
Expr reshape(Expr a, Eigen::Index rows, Eigen::Index cols);  // row-major order preserved
Expr lookup_rows(Expr table, std::span<const int> ids);
Expr pick(Expr a, Eigen::Index row, Eigen::Index col);
Expr sum(Expr a);

inline Expr operator+(Expr a, Expr b) { return add(a, b); }
inline Expr operator-(Expr a, Expr b) { return sub(a, b); }
inline Expr operator*(Expr a, double s) { return scale(a, s); }

}  // namespace ag
}  // namespace cisper
